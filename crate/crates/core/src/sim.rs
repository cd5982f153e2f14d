//! Fixed-step longitudinal world with one host (follower) and one lead vehicle.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fmt::fmt_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Integration step in seconds (25 Hz).
    pub dt: f64,
    pub v_max: f64,
    pub gas_accel_max: f64,
    /// Full brake decelerates at `brake_decel_max_factor * friction`.
    pub brake_decel_max_factor: f64,
    pub friction_range: (f64, f64),
    /// Steps per naturalistic episode (7500 = 5 minutes).
    pub episode_len: u64,
    pub headway_cap: f64,
    pub v_eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.04,
            v_max: 40.0,
            gas_accel_max: 2.5,
            brake_decel_max_factor: 9.81,
            friction_range: (0.4, 1.0),
            episode_len: 7500,
            headway_cap: 10.0,
            v_eps: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.dt.is_nan() || self.dt <= 0.0 {
            return Err("dt must be > 0".into());
        }
        let (lo, hi) = self.friction_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(format!(
                "friction_range ({lo}, {hi}) must lie within (0, 1]"
            ));
        }
        if self.episode_len == 0 {
            return Err("episode_len must be >= 1".into());
        }
        if !(self.v_max > 0.0 && self.headway_cap > 0.0 && self.v_eps > 0.0) {
            return Err("v_max, headway_cap and v_eps must be > 0".into());
        }
        Ok(())
    }

    pub fn with_episode_len(mut self, steps: u64) -> Self {
        self.episode_len = steps;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub v_host: f64,
    pub v_lead: f64,
    /// Bumper-to-bumper gap in metres.
    pub x_rel: f64,
    pub friction: f64,
    pub step: u64,
}

/// What the follower sees: host speed, relative speed and time headway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub v: f64,
    pub v_rel: f64,
    pub t_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepEvent {
    pub collided: bool,
    pub episode_done: bool,
}

/// Uniform range for the common initial speed of both vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityRange {
    pub lo: f64,
    pub hi: f64,
}

impl VelocityRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn exactly(v: f64) -> Self {
        Self { lo: v, hi: v }
    }
}

/// Time headway `x_rel / v`, guarded against `v -> 0` and capped.
pub fn headway(x_rel: f64, v: f64, cfg: &SimConfig) -> f64 {
    (x_rel / v.max(cfg.v_eps)).clamp(0.0, cfg.headway_cap)
}

/// Longitudinal acceleration produced by a pedal value. Out-of-range pedals
/// are clipped.
pub fn pedal_to_accel(pedal: f64, friction: f64, cfg: &SimConfig) -> f64 {
    let p = if (-1.0..=1.0).contains(&pedal) {
        pedal
    } else {
        log::debug!("pedal {pedal} outside [-1, 1], clipped");
        if pedal.is_nan() {
            0.0
        } else {
            pedal.clamp(-1.0, 1.0)
        }
    };
    if p >= 0.0 {
        p * cfg.gas_accel_max
    } else {
        p * cfg.brake_decel_max_factor * friction
    }
}

pub fn observe(world: &WorldState, cfg: &SimConfig) -> Observation {
    Observation {
        v: world.v_host,
        v_rel: world.v_lead - world.v_host,
        t_h: headway(world.x_rel, world.v_host, cfg),
    }
}

/// Semi-implicit Euler step: speeds first, then the gap with the new speeds.
pub fn step(
    world: &WorldState,
    pedal: f64,
    lead_accel: f64,
    cfg: &SimConfig,
) -> (WorldState, Observation, StepEvent) {
    let a_host = pedal_to_accel(pedal, world.friction, cfg);
    let v_host = (world.v_host + a_host * cfg.dt).clamp(0.0, cfg.v_max);
    let v_lead = (world.v_lead + lead_accel * cfg.dt).clamp(0.0, cfg.v_max);
    let x_rel = world.x_rel + (v_lead - v_host) * cfg.dt;
    let next = WorldState {
        v_host,
        v_lead,
        x_rel,
        friction: world.friction,
        step: world.step + 1,
    };
    let collided = x_rel <= 0.0;
    let event = StepEvent {
        collided,
        episode_done: collided || next.step >= cfg.episode_len,
    };
    (next, observe(&next, cfg), event)
}

/// Equal initial speeds drawn from `range`, a 2 s gap, and a random friction
/// coefficient.
pub fn init_episode<R: Rng + ?Sized>(
    cfg: &SimConfig,
    rng: &mut R,
    range: VelocityRange,
) -> WorldState {
    let v = if range.hi > range.lo {
        rng.gen_range(range.lo..=range.hi)
    } else {
        range.lo
    };
    let (f_lo, f_hi) = cfg.friction_range;
    let friction = if f_hi > f_lo {
        rng.gen_range(f_lo..=f_hi)
    } else {
        f_lo
    };
    WorldState {
        v_host: v,
        v_lead: v,
        x_rel: 2.0 * v,
        friction,
        step: 0,
    }
}

/// One row of an exported episode trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub time_s: f64,
    pub v_host: f64,
    pub v_lead: f64,
    pub v_rel: f64,
    pub x_rel: f64,
    pub t_h: f64,
    pub pedal: f64,
    pub lead_accel: f64,
    pub friction: f64,
    pub collided: bool,
}

pub const EPISODE_LOG_HEADER: &str =
    "step,time_s,v_host,v_lead,v_rel,x_rel,t_h,pedal,lead_accel,friction,collided";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub rows: Vec<LogRow>,
}

impl EpisodeLog {
    /// Record the state reached after applying `pedal` and `lead_accel`.
    pub fn push(
        &mut self,
        world: &WorldState,
        obs: &Observation,
        pedal: f64,
        lead_accel: f64,
        collided: bool,
        cfg: &SimConfig,
    ) {
        self.rows.push(LogRow {
            step: world.step,
            time_s: world.step as f64 * cfg.dt,
            v_host: world.v_host,
            v_lead: world.v_lead,
            v_rel: obs.v_rel,
            x_rel: world.x_rel,
            t_h: obs.t_h,
            pedal,
            lead_accel,
            friction: world.friction,
            collided,
        });
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{EPISODE_LOG_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                fmt_f64(r.time_s),
                fmt_f64(r.v_host),
                fmt_f64(r.v_lead),
                fmt_f64(r.v_rel),
                fmt_f64(r.x_rel),
                fmt_f64(r.t_h),
                fmt_f64(r.pedal),
                fmt_f64(r.lead_accel),
                fmt_f64(r.friction),
                u8::from(r.collided)
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(v_host: f64, v_lead: f64, x_rel: f64, friction: f64) -> WorldState {
        WorldState {
            v_host,
            v_lead,
            x_rel,
            friction,
            step: 0,
        }
    }

    #[test]
    fn headway_cases() {
        let cfg = SimConfig::default();
        assert_eq!(headway(40.0, 20.0, &cfg), 2.0);
        assert_eq!(headway(50.0, 0.0, &cfg), 10.0);
        assert_eq!(headway(-1.0, 20.0, &cfg), 0.0);
        assert_eq!(headway(0.5, 0.0, &cfg), 5.0);
    }

    #[test]
    fn pedal_mapping() {
        let cfg = SimConfig::default();
        assert_eq!(pedal_to_accel(0.0, 0.7, &cfg), 0.0);
        assert_eq!(pedal_to_accel(1.0, 0.4, &cfg), 2.5);
        assert!((pedal_to_accel(-1.0, 0.475, &cfg) + 4.65975).abs() < 1e-12);
        assert_eq!(pedal_to_accel(3.0, 1.0, &cfg), 2.5);
        assert_eq!(pedal_to_accel(-3.0, 1.0, &cfg), -9.81);
    }

    #[test]
    fn steady_state_is_preserved() {
        let cfg = SimConfig::default();
        let w = world(25.0, 25.0, 50.0, 0.8);
        let (n, obs, ev) = step(&w, 0.0, 0.0, &cfg);
        assert_eq!(n.x_rel, 50.0);
        assert_eq!(obs.t_h, 2.0);
        assert_eq!(ev, StepEvent::default());
    }

    #[test]
    fn hand_stepped_kinematics() {
        let cfg = SimConfig::default();
        let (n, obs, _) = step(&world(20.0, 20.0, 40.0, 1.0), 1.0, 0.0, &cfg);
        assert!((n.v_host - 20.1).abs() < 1e-12);
        assert!((n.x_rel - 39.996).abs() < 1e-12);
        assert!((obs.v_rel + 0.1).abs() < 1e-12);
        assert_eq!(n.step, 1);
    }

    #[test]
    fn near_contact_collides_in_one_step() {
        let cfg = SimConfig::default();
        let (n, _, ev) = step(&world(21.0, 20.0, 0.001, 1.0), 0.0, 0.0, &cfg);
        assert!(n.x_rel <= 0.0);
        assert!(ev.collided && ev.episode_done);
    }

    #[test]
    fn episode_ends_at_length() {
        let cfg = SimConfig::default().with_episode_len(3);
        let mut w = world(10.0, 10.0, 20.0, 1.0);
        let mut done = Vec::new();
        for _ in 0..3 {
            let (n, _, ev) = step(&w, 0.0, 0.0, &cfg);
            done.push(ev.episode_done);
            w = n;
        }
        assert_eq!(done, vec![false, false, true]);
    }

    #[test]
    fn velocities_are_clamped() {
        let cfg = SimConfig::default();
        let (n, _, _) = step(&world(0.01, 39.99, 10.0, 1.0), -1.0, 6.0, &cfg);
        assert_eq!(n.v_host, 0.0);
        assert_eq!(n.v_lead, 40.0);
    }

    #[test]
    fn init_episode_sets_two_second_gap() {
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = init_episode(&cfg, &mut rng, VelocityRange::exactly(20.0));
        assert_eq!((w.v_host, w.v_lead, w.x_rel), (20.0, 20.0, 40.0));
        assert_eq!(observe(&w, &cfg).t_h, 2.0);
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for _ in 0..10_000 {
            let w = init_episode(&cfg, &mut rng, VelocityRange::new(12.0, 30.0));
            lo = lo.min(w.friction);
            hi = hi.max(w.friction);
            assert!((12.0..=30.0).contains(&w.v_host));
        }
        assert!(lo >= 0.4 && hi <= 1.0);
        let a = init_episode(
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(9),
            VelocityRange::new(12.0, 30.0),
        );
        let b = init_episode(
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(9),
            VelocityRange::new(12.0, 30.0),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn episode_log_header() {
        let cfg = SimConfig::default();
        let mut log = EpisodeLog::default();
        let w = world(20.0, 20.0, 40.0, 0.5);
        log.push(&w, &observe(&w, &cfg), 0.0, 0.0, false, &cfg);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), EPISODE_LOG_HEADER);
        assert_eq!(lines.next().unwrap().split(',').count(), 11);
    }
}
