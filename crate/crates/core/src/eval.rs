//! Naturalistic and adversarial test campaigns and their reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{adv_train_episode, AdvConfig, AdvPolicy, AdversaryError};
use crate::drivers::{gen_lead_profile, profile_accel, Follower, LeadProfile, ProfileKind};
use crate::fmt::fmt_f64;
use crate::sim::{init_episode, observe, step, EpisodeLog, LogRow, SimConfig, VelocityRange};

pub const SCENARIO_SET_VERSION: u32 = 1;

/// A fixed, versioned list of naturalistic lead-vehicle profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub version: u32,
    pub seed: u64,
    pub scenarios: Vec<LeadProfile>,
}

impl ScenarioSet {
    /// `n` profiles cycling through cruise, wave and emergency.
    pub fn generate(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenarios = (0..n)
            .map(|i| gen_lead_profile(ProfileKind::ALL[i % ProfileKind::ALL.len()], &mut rng))
            .collect();
        Self {
            version: SCENARIO_SET_VERSION,
            seed,
            scenarios,
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(
            path,
            serde_json::to_string_pretty(self).expect("serializable") + "\n",
        )
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let set: ScenarioSet = serde_json::from_str(&text).map_err(|e| {
            format!(
                "{}: line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            )
        })?;
        if set.version != SCENARIO_SET_VERSION {
            return Err(format!("unsupported scenario set version {}", set.version));
        }
        Ok(set)
    }
}

/// Aggregate naturalistic-driving metrics over every simulated step.
///
/// `max_abs_v_rel` is the largest |v_lead - v_host|; `mean_v_rel` is the
/// signed mean. Collision steps count with gap and headway 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NatReport {
    pub min_x_rel: f64,
    pub mean_x_rel: f64,
    pub max_abs_v_rel: f64,
    pub mean_v_rel: f64,
    pub min_t_h: f64,
    pub mean_t_h: f64,
    pub collisions: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, Default)]
pub struct NatAccumulator {
    steps: usize,
    sum_x: f64,
    sum_v_rel: f64,
    sum_t_h: f64,
    min_x: Option<f64>,
    min_t_h: Option<f64>,
    max_abs_v_rel: f64,
    collisions: usize,
    episodes: usize,
}

impl NatAccumulator {
    pub fn push(&mut self, row: &LogRow) {
        let x = if row.collided {
            0.0
        } else {
            row.x_rel.max(0.0)
        };
        let t_h = if row.collided { 0.0 } else { row.t_h };
        self.steps += 1;
        self.sum_x += x;
        self.sum_v_rel += row.v_rel;
        self.sum_t_h += t_h;
        self.min_x = Some(self.min_x.map_or(x, |m| m.min(x)));
        self.min_t_h = Some(self.min_t_h.map_or(t_h, |m| m.min(t_h)));
        self.max_abs_v_rel = self.max_abs_v_rel.max(row.v_rel.abs());
    }

    pub fn end_episode(&mut self, collided: bool) {
        self.episodes += 1;
        self.collisions += usize::from(collided);
    }

    pub fn merge(&mut self, other: &NatAccumulator) {
        self.steps += other.steps;
        self.sum_x += other.sum_x;
        self.sum_v_rel += other.sum_v_rel;
        self.sum_t_h += other.sum_t_h;
        for (mine, theirs) in [
            (&mut self.min_x, other.min_x),
            (&mut self.min_t_h, other.min_t_h),
        ] {
            if let Some(t) = theirs {
                *mine = Some(mine.map_or(t, |m| m.min(t)));
            }
        }
        self.max_abs_v_rel = self.max_abs_v_rel.max(other.max_abs_v_rel);
        self.collisions += other.collisions;
        self.episodes += other.episodes;
    }

    pub fn finish(&self) -> NatReport {
        let n = self.steps.max(1) as f64;
        NatReport {
            min_x_rel: self.min_x.unwrap_or(0.0),
            mean_x_rel: self.sum_x / n,
            max_abs_v_rel: self.max_abs_v_rel,
            mean_v_rel: self.sum_v_rel / n,
            min_t_h: self.min_t_h.unwrap_or(0.0),
            mean_t_h: self.sum_t_h / n,
            collisions: self.collisions,
            episodes: self.episodes,
        }
    }
}

impl NatReport {
    pub fn from_logs(logs: &[EpisodeLog]) -> Self {
        let mut acc = NatAccumulator::default();
        for log in logs {
            for row in &log.rows {
                acc.push(row);
            }
            acc.end_episode(log.rows.last().is_some_and(|r| r.collided));
        }
        acc.finish()
    }
}

/// Drive `follower` through one naturalistic scenario. Friction and any
/// follower randomness are drawn from `seed`.
pub fn run_scenario<F: Follower + ?Sized>(
    follower: &mut F,
    profile: &LeadProfile,
    sim: &SimConfig,
    seed: u64,
    acc: &mut NatAccumulator,
    mut log: Option<&mut EpisodeLog>,
) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = init_episode(
        sim,
        &mut rng,
        VelocityRange::exactly(profile.initial_velocity),
    );
    follower.reseed(rng.gen());
    let mut obs = observe(&world, sim);
    loop {
        let pedal = follower.pedal(&obs);
        let lead = profile_accel(profile, world.step as f64 * sim.dt, world.v_lead, sim.dt);
        let (next, next_obs, ev) = step(&world, pedal, lead, sim);
        world = next;
        obs = next_obs;
        let row = LogRow {
            step: world.step,
            time_s: world.step as f64 * sim.dt,
            v_host: world.v_host,
            v_lead: world.v_lead,
            v_rel: obs.v_rel,
            x_rel: world.x_rel,
            t_h: obs.t_h,
            pedal,
            lead_accel: lead,
            friction: world.friction,
            collided: ev.collided,
        };
        acc.push(&row);
        if let Some(l) = log.as_deref_mut() {
            l.rows.push(row);
        }
        if ev.episode_done {
            acc.end_episode(ev.collided);
            return ev.collided;
        }
    }
}

fn episode_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Run every scenario once. Returns per-episode logs when `keep_logs` is set.
pub fn run_naturalistic<F: Follower + Clone>(
    follower: &F,
    scenarios: &ScenarioSet,
    sim: &SimConfig,
    seed: u64,
    keep_logs: bool,
) -> (NatReport, Vec<EpisodeLog>) {
    let mut acc = NatAccumulator::default();
    let mut logs = Vec::new();
    for (i, profile) in scenarios.scenarios.iter().enumerate() {
        let mut f = follower.clone();
        let mut log = EpisodeLog::default();
        run_scenario(
            &mut f,
            profile,
            sim,
            episode_seed(seed, i),
            &mut acc,
            keep_logs.then_some(&mut log),
        );
        if keep_logs {
            logs.push(log);
        }
    }
    (acc.finish(), logs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvEvalConfig {
    pub n_adversaries: usize,
    pub max_episodes: usize,
    pub adversary: AdvConfig,
}

impl Default for AdvEvalConfig {
    fn default() -> Self {
        Self {
            n_adversaries: 5,
            max_episodes: 200,
            adversary: AdvConfig::default(),
        }
    }
}

/// One freshly initialised adversary trained against the frozen follower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvRun {
    pub collisions: usize,
    /// 1-based index of the first episode that ended in a collision.
    pub first_collision: Option<usize>,
    pub min_headway: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvReport {
    pub adversaries: usize,
    pub max_episodes: usize,
    pub runs: Vec<AdvRun>,
    pub collisions_total: usize,
    pub collisions_mean: f64,
    /// Mean first-collision episode over adversaries that collided at all.
    pub episodes_until_first_collision: Option<f64>,
    pub min_headway_mean: Vec<f64>,
    pub min_headway_std: Vec<f64>,
}

impl AdvReport {
    pub fn from_runs(runs: Vec<AdvRun>, max_episodes: usize) -> Self {
        let n = runs.len();
        let collisions_total = runs.iter().map(|r| r.collisions).sum();
        let firsts: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.first_collision.map(|e| e as f64))
            .collect();
        let episodes_until_first_collision =
            (!firsts.is_empty()).then(|| firsts.iter().sum::<f64>() / firsts.len() as f64);
        let mut mean = Vec::with_capacity(max_episodes);
        let mut std = Vec::with_capacity(max_episodes);
        for e in 0..max_episodes {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.min_headway.get(e).copied())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            let var =
                vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len().max(1) as f64;
            mean.push(m);
            std.push(var.sqrt());
        }
        Self {
            adversaries: n,
            max_episodes,
            collisions_total,
            collisions_mean: collisions_total as f64 / n.max(1) as f64,
            episodes_until_first_collision,
            runs,
            min_headway_mean: mean,
            min_headway_std: std,
        }
    }

    /// Mean of the across-adversary mean min-headway over the last `n` episodes.
    pub fn tail_mean_min_headway(&self, n: usize) -> f64 {
        let k = n.min(self.min_headway_mean.len());
        let tail = &self.min_headway_mean[self.min_headway_mean.len() - k..];
        tail.iter().sum::<f64>() / k.max(1) as f64
    }
}

/// Train `n_adversaries` fresh adversaries for `max_episodes` each against
/// clones of the frozen follower.
pub fn run_adversarial<F: Follower + Clone>(
    follower: &F,
    cfg: &AdvEvalConfig,
    sim: &SimConfig,
    seed: u64,
) -> Result<AdvReport, AdversaryError> {
    let range = cfg.adversary.constraints.range();
    let mut runs = Vec::with_capacity(cfg.n_adversaries);
    for k in 0..cfg.n_adversaries {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed ^ 0xAD7E_25A1, k));
        let mut policy = AdvPolicy::new(cfg.adversary.clone(), rng.gen())?;
        let mut run = AdvRun {
            collisions: 0,
            first_collision: None,
            min_headway: Vec::with_capacity(cfg.max_episodes),
        };
        for e in 0..cfg.max_episodes {
            let mut f = follower.clone();
            f.reseed(rng.gen());
            let res = adv_train_episode(&mut policy, &mut f, sim, range, &mut rng)?;
            if res.collided {
                run.collisions += 1;
                run.first_collision.get_or_insert(e + 1);
            }
            run.min_headway.push(res.min_headway);
        }
        runs.push(run);
    }
    Ok(AdvReport::from_runs(runs, cfg.max_episodes))
}

/// One column of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub naturalistic: Option<NatReport>,
    pub adversarial: Option<AdvReport>,
}

pub const METRICS_HEADER: &str =
    "variant,min_x_rel,mean_x_rel,max_abs_v_rel,mean_v_rel,min_t_h,mean_t_h,\
nat_collisions,nat_episodes,adv_collisions_total,adv_collisions_mean,adv_episodes_until_collision,\
adversaries,adv_episodes,config_hash,seed";

pub const HEADWAY_HEADER: &str = "episode,mean_min_t_h,std_min_t_h";

pub fn metrics_csv(reports: &[VariantReport], config_hash: &str, seed: u64) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in reports {
        let mut cells = vec![r.variant.clone()];
        match &r.naturalistic {
            Some(n) => {
                for v in [
                    n.min_x_rel,
                    n.mean_x_rel,
                    n.max_abs_v_rel,
                    n.mean_v_rel,
                    n.min_t_h,
                    n.mean_t_h,
                ] {
                    cells.push(fmt_f64(v));
                }
                cells.push(n.collisions.to_string());
                cells.push(n.episodes.to_string());
            }
            None => cells.extend(std::iter::repeat_n(String::new(), 8)),
        }
        match &r.adversarial {
            Some(a) => {
                cells.push(a.collisions_total.to_string());
                cells.push(fmt_f64(a.collisions_mean));
                cells.push(
                    a.episodes_until_first_collision
                        .map(fmt_f64)
                        .unwrap_or_default(),
                );
                cells.push(a.adversaries.to_string());
                cells.push(a.max_episodes.to_string());
            }
            None => cells.extend(std::iter::repeat_n(String::new(), 5)),
        }
        cells.push(config_hash.to_string());
        cells.push(seed.to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn headway_csv(report: &AdvReport) -> String {
    let mut out = String::from(HEADWAY_HEADER);
    out.push('\n');
    for (e, (m, s)) in report
        .min_headway_mean
        .iter()
        .zip(&report.min_headway_std)
        .enumerate()
    {
        out.push_str(&format!("{},{},{}\n", e + 1, fmt_f64(*m), fmt_f64(*s)));
    }
    out
}

/// One table row: label and cell formatter.
type Row<T> = (&'static str, fn(&T) -> String);

/// Human-readable table with one column per variant, rows as in the
/// usual comparison order.
pub fn markdown_table(reports: &[VariantReport]) -> String {
    let mut out = String::new();
    out.push_str(
        "Interpretation: max. v_rel is max |v_lead - v_host|; mean v_rel is the signed mean. ",
    );
    out.push_str(
        "Adversarial collisions are reported as the total and the per-adversary mean.\n\n",
    );
    out.push_str("| Framework | Parameter |");
    for r in reports {
        out.push_str(&format!(" {} |", r.variant));
    }
    out.push('\n');
    out.push_str("|---|---|");
    out.push_str(&"---|".repeat(reports.len()));
    out.push('\n');
    let nat_rows: [Row<NatReport>; 7] = [
        ("min. x_rel [m]", |n| format!("{:.2}", n.min_x_rel)),
        ("mean x_rel [m]", |n| format!("{:.2}", n.mean_x_rel)),
        ("max. v_rel [m/s]", |n| format!("{:.2}", n.max_abs_v_rel)),
        ("mean v_rel [m/s]", |n| format!("{:.4}", n.mean_v_rel)),
        ("min. t_h [s]", |n| format!("{:.2}", n.min_t_h)),
        ("mean t_h [s]", |n| format!("{:.2}", n.mean_t_h)),
        ("collisions", |n| n.collisions.to_string()),
    ];
    for (name, f) in nat_rows {
        out.push_str(&format!("| Nat. | {name} |"));
        for r in reports {
            out.push_str(&format!(
                " {} |",
                r.naturalistic
                    .as_ref()
                    .map(f)
                    .unwrap_or_else(|| "n/a".into())
            ));
        }
        out.push('\n');
    }
    let adv_rows: [Row<AdvReport>; 3] = [
        ("collisions against adversaries (mean)", |a| {
            format!("{:.1}", a.collisions_mean)
        }),
        ("collisions against adversaries (total)", |a| {
            a.collisions_total.to_string()
        }),
        ("episodes until collision", |a| {
            a.episodes_until_first_collision
                .map(|e| format!("{e:.0}"))
                .unwrap_or_else(|| "-".into())
        }),
    ];
    for (name, f) in adv_rows {
        out.push_str(&format!("| Adv. | {name} |"));
        for r in reports {
            out.push_str(&format!(
                " {} |",
                r.adversarial
                    .as_ref()
                    .map(f)
                    .unwrap_or_else(|| "n/a".into())
            ));
        }
        out.push('\n');
    }
    out
}

/// Write `metrics.csv`, `table.md` and one `headway_<variant>.csv` per
/// variant with adversarial results. Returns the written paths.
pub fn emit_report(
    reports: &[VariantReport],
    dir: &Path,
    config_hash: &str,
    seed: u64,
) -> std::io::Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "no reports to emit",
        ));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> std::io::Result<()> {
        let p = dir.join(name);
        let mut f = fs::File::create(&p)?;
        f.write_all(body.as_bytes())?;
        written.push(p);
        Ok(())
    };
    put(
        "metrics.csv".into(),
        metrics_csv(reports, config_hash, seed),
    )?;
    put("table.md".into(), markdown_table(reports))?;
    for r in reports {
        if let Some(a) = &r.adversarial {
            put(format!("headway_{}.csv", r.variant), headway_csv(a))?;
        }
    }
    Ok(written)
}
