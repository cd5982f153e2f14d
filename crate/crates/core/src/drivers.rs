//! Scripted demonstrator and naturalistic lead-vehicle trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::sim::Observation;

/// Anything that turns an observation into a pedal value in `[-1, 1]`.
pub trait Follower {
    fn pedal(&mut self, obs: &Observation) -> f64;

    /// Re-seed any internal randomness at the start of an episode.
    fn reseed(&mut self, _seed: u64) {}
}

impl<F: FnMut(&Observation) -> f64> Follower for F {
    fn pedal(&mut self, obs: &Observation) -> f64 {
        self(obs)
    }
}

/// Proportional headway/relative-speed law of the demonstrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertGains {
    pub k_h: f64,
    pub k_v: f64,
    pub target_headway: f64,
    pub noise_std: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        Self {
            k_h: 0.5,
            k_v: 0.15,
            target_headway: 2.0,
            noise_std: 0.02,
        }
    }
}

impl ExpertGains {
    pub fn noiseless() -> Self {
        Self {
            noise_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.k_h > 0.0 && self.k_v > 0.0 && self.target_headway > 0.0) {
            return Err("expert gains and target headway must be > 0".into());
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return Err("expert noise_std must be >= 0".into());
        }
        Ok(())
    }
}

pub fn expert_pedal<R: Rng + ?Sized>(obs: &Observation, gains: &ExpertGains, rng: &mut R) -> f64 {
    let mut p = gains.k_h * (obs.t_h - gains.target_headway) + gains.k_v * obs.v_rel;
    if gains.noise_std > 0.0 {
        p += Normal::new(0.0, gains.noise_std)
            .expect("noise_std is finite and non-negative")
            .sample(rng);
    }
    p.clamp(-1.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct ExpertFollower {
    pub gains: ExpertGains,
    rng: ChaCha8Rng,
}

impl ExpertFollower {
    pub fn new(gains: ExpertGains, seed: u64) -> Self {
        Self {
            gains,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn noiseless() -> Self {
        Self::new(ExpertGains::noiseless(), 0)
    }
}

impl Follower for ExpertFollower {
    fn pedal(&mut self, obs: &Observation) -> f64 {
        expert_pedal(obs, &self.gains, &mut self.rng)
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Cruise,
    Wave,
    Emergency,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 3] = [
        ProfileKind::Cruise,
        ProfileKind::Wave,
        ProfileKind::Emergency,
    ];
}

/// Accelerate at `accel` towards `target_velocity`, then hold it; the whole
/// segment lasts `hold_duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub target_velocity: f64,
    pub accel: f64,
    pub hold_duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadProfile {
    pub kind: ProfileKind,
    pub initial_velocity: f64,
    pub segments: Vec<Segment>,
}

pub const PROFILE_V_MIN: f64 = 15.0;
pub const PROFILE_V_MAX: f64 = 35.0;

impl LeadProfile {
    pub fn period(&self) -> f64 {
        self.segments.iter().map(|s| s.hold_duration).sum()
    }

    pub fn segment_at(&self, t: f64) -> &Segment {
        let period = self.period();
        let mut local = if period > 0.0 {
            t.rem_euclid(period)
        } else {
            0.0
        };
        for s in &self.segments {
            if local < s.hold_duration {
                return s;
            }
            local -= s.hold_duration;
        }
        self.segments
            .last()
            .expect("profile has at least one segment")
    }
}

pub fn gen_lead_profile<R: Rng + ?Sized>(kind: ProfileKind, rng: &mut R) -> LeadProfile {
    match kind {
        ProfileKind::Cruise => {
            let v0 = rng.gen_range(PROFILE_V_MIN..=PROFILE_V_MAX);
            LeadProfile {
                kind,
                initial_velocity: v0,
                segments: vec![Segment {
                    target_velocity: v0,
                    accel: 0.0,
                    hold_duration: 300.0,
                }],
            }
        }
        ProfileKind::Wave => {
            let v0 = rng.gen_range(PROFILE_V_MIN..=PROFILE_V_MAX);
            let mut segments = vec![Segment {
                target_velocity: v0,
                accel: 0.0,
                hold_duration: rng.gen_range(5.0..15.0),
            }];
            let turns = rng.gen_range(2..=4);
            let mut prev = v0;
            let mut down = rng.gen_bool(0.5);
            for k in 0..(2 * turns) {
                let last = k == 2 * turns - 1;
                let target = if last {
                    v0
                } else if down {
                    rng.gen_range(PROFILE_V_MIN..=prev.max(PROFILE_V_MIN + 2.0))
                } else {
                    rng.gen_range(prev.min(PROFILE_V_MAX - 2.0)..=PROFILE_V_MAX)
                };
                let mag = rng.gen_range(0.5..=3.0);
                let accel = if target >= prev { mag } else { -mag };
                segments.push(Segment {
                    target_velocity: target,
                    accel,
                    hold_duration: (target - prev).abs() / mag + rng.gen_range(5.0..20.0),
                });
                prev = target;
                down = !down;
            }
            LeadProfile {
                kind,
                initial_velocity: v0,
                segments,
            }
        }
        ProfileKind::Emergency => {
            let v0 = rng.gen_range(22.0..=PROFILE_V_MAX);
            let low = rng.gen_range(PROFILE_V_MIN..=v0 - 5.0);
            let brake = rng.gen_range(-6.0..=-4.0);
            let recover = rng.gen_range(1.0..=2.0);
            LeadProfile {
                kind,
                initial_velocity: v0,
                segments: vec![
                    Segment {
                        target_velocity: v0,
                        accel: 0.0,
                        hold_duration: rng.gen_range(20.0..60.0),
                    },
                    Segment {
                        target_velocity: low,
                        accel: brake,
                        hold_duration: (v0 - low) / -brake + rng.gen_range(5.0..20.0),
                    },
                    Segment {
                        target_velocity: v0,
                        accel: recover,
                        hold_duration: (v0 - low) / recover + rng.gen_range(20.0..60.0),
                    },
                ],
            }
        }
    }
}

/// Lead acceleration at time `t` given the current lead speed. The last step
/// towards a target is shortened so the target is never overshot.
pub fn profile_accel(profile: &LeadProfile, t: f64, v_lead: f64, dt: f64) -> f64 {
    let seg = profile.segment_at(t.max(0.0));
    let gap = seg.target_velocity - v_lead;
    if seg.accel > 0.0 && gap > 0.0 {
        seg.accel.min(gap / dt)
    } else if seg.accel < 0.0 && gap < 0.0 {
        seg.accel.max(gap / dt)
    } else {
        0.0
    }
}
