//! Observation/action transitions, collision windows, splits and CSV I/O.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::{
    gen_lead_profile, profile_accel, ExpertFollower, ExpertGains, Follower, ProfileKind,
};
use crate::fmt::fmt_f64;
use crate::sim::{init_episode, observe, step, Observation, SimConfig, VelocityRange};

/// Steps kept before each collision (one second at 25 Hz).
pub const COLLISION_WINDOW: usize = 25;

/// Feature scaling for `(v, v_rel, t_h)`.
pub const NORMALIZATION: [f64; 3] = [40.0, 20.0, 10.0];

pub const CSV_HEADER: &str = "episode,step,v,v_rel,t_h,action";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: {field} = {value} out of range")]
    OutOfRange {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("dataset has {0} transitions, need at least 5 to split")]
    TooSmall(usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Expert,
    Collision,
    /// Hand-built or synthetic data (tests, toy regressions).
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub episode: u64,
    pub step: u64,
    pub v: f64,
    pub v_rel: f64,
    pub t_h: f64,
    pub action: f64,
}

impl Transition {
    pub fn new(episode: u64, step: u64, obs: &Observation, action: f64) -> Self {
        Self {
            episode,
            step,
            v: obs.v,
            v_rel: obs.v_rel,
            t_h: obs.t_h,
            action,
        }
    }

    pub fn observation(&self) -> Observation {
        Observation {
            v: self.v,
            v_rel: self.v_rel,
            t_h: self.t_h,
        }
    }

    pub fn features(&self) -> [f64; 3] {
        normalize(&self.observation())
    }
}

/// Scale `(v, v_rel, t_h)` by `(40, 20, 10)` and clip each to `[-1, 1]`.
pub fn normalize(obs: &Observation) -> [f64; 3] {
    [
        (obs.v / NORMALIZATION[0]).clamp(-1.0, 1.0),
        (obs.v_rel / NORMALIZATION[1]).clamp(-1.0, 1.0),
        (obs.t_h / NORMALIZATION[2]).clamp(-1.0, 1.0),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub provenance: Provenance,
    pub seed: u64,
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new(provenance: Provenance, seed: u64, transitions: Vec<Transition>) -> Self {
        Self {
            provenance,
            seed,
            transitions,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Structural checks; `for_training` additionally rejects empty datasets.
    pub fn validate(&self, for_training: bool) -> Result<(), DatasetError> {
        if for_training && self.is_empty() {
            return Err(DatasetError::Invalid(
                "empty dataset cannot be used for training".into(),
            ));
        }
        if self.provenance == Provenance::Collision && !self.len().is_multiple_of(COLLISION_WINDOW)
        {
            return Err(DatasetError::Invalid(format!(
                "collision dataset length {} is not a multiple of {COLLISION_WINDOW}",
                self.len()
            )));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            check_transition(t, i + 2)?;
        }
        Ok(())
    }

    pub fn mean_t_h(&self) -> f64 {
        self.transitions.iter().map(|t| t.t_h).sum::<f64>() / self.len().max(1) as f64
    }

    pub fn mean_action(&self) -> f64 {
        self.transitions.iter().map(|t| t.action).sum::<f64>() / self.len().max(1) as f64
    }

    /// Contiguous 25-step windows of a collision dataset.
    pub fn windows(&self) -> std::slice::Chunks<'_, Transition> {
        self.transitions.chunks(COLLISION_WINDOW)
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<Transition> {
        indices.iter().map(|&i| self.transitions[i]).collect()
    }
}

fn check_transition(t: &Transition, line: usize) -> Result<(), DatasetError> {
    for (field, value) in [
        ("v", t.v),
        ("v_rel", t.v_rel),
        ("t_h", t.t_h),
        ("action", t.action),
    ] {
        if !value.is_finite() {
            return Err(DatasetError::OutOfRange { line, field, value });
        }
    }
    if !(-1.0..=1.0).contains(&t.action) {
        return Err(DatasetError::OutOfRange {
            line,
            field: "action",
            value: t.action,
        });
    }
    if !(0.0..=10.0).contains(&t.t_h) {
        return Err(DatasetError::OutOfRange {
            line,
            field: "t_h",
            value: t.t_h,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seeded 80/20 split. Collision datasets are split by whole windows.
pub fn split_80_20(ds: &Dataset, seed: u64) -> Result<Split, DatasetError> {
    let n = ds.len();
    if n < 5 {
        return Err(DatasetError::TooSmall(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (unit, units) = if ds.provenance == Provenance::Collision {
        if !n.is_multiple_of(COLLISION_WINDOW) {
            return Err(DatasetError::Invalid(format!(
                "collision dataset length {n} is not a multiple of {COLLISION_WINDOW}"
            )));
        }
        (COLLISION_WINDOW, n / COLLISION_WINDOW)
    } else {
        (1, n)
    };
    let mut order: Vec<usize> = (0..units).collect();
    order.shuffle(&mut rng);
    let n_train = (0.8 * units as f64).round() as usize;
    let expand = |ids: &[usize]| -> Vec<usize> {
        ids.iter().flat_map(|&u| u * unit..(u + 1) * unit).collect()
    };
    Ok(Split {
        train: expand(&order[..n_train]),
        validation: expand(&order[n_train..]),
    })
}

/// Sidecar metadata written next to every dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub provenance: Provenance,
    pub seed: u64,
    pub len: usize,
    pub normalization: [f64; 3],
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Write the CSV and its metadata sidecar.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    write_csv_with_meta(ds, path, None, None)
}

pub fn write_csv_with_meta(
    ds: &Dataset,
    path: &Path,
    scale: Option<f64>,
    config_hash: Option<String>,
) -> Result<(), DatasetError> {
    let f = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for t in &ds.transitions {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t.episode,
                t.step,
                fmt_f64(t.v),
                fmt_f64(t.v_rel),
                fmt_f64(t.t_h),
                fmt_f64(t.action)
            )?;
        }
        w.flush()
    };
    body().map_err(|e| DatasetError::io(path, e))?;
    let meta = DatasetMeta {
        provenance: ds.provenance,
        seed: ds.seed,
        len: ds.len(),
        normalization: NORMALIZATION,
        scale,
        config_hash,
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&side, text + "\n").map_err(|e| DatasetError::io(&side, e))?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<Option<DatasetMeta>, DatasetError> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| DatasetError::io(&side, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| DatasetError::Malformed {
            line: e.line(),
            msg: format!("{}: {e}", side.display()),
        })
}

/// Read a dataset CSV. Provenance and seed come from the sidecar when present;
/// otherwise the dataset is tagged synthetic with seed 0.
pub fn read_csv(path: &Path) -> Result<Dataset, DatasetError> {
    let meta = read_meta(path)?;
    let f = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == CSV_HEADER => {}
        Some(Ok(h)) => {
            return Err(DatasetError::Malformed {
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`, found `{h}`"),
            })
        }
        Some(Err(e)) => return Err(DatasetError::io(path, e)),
        None => {
            return Err(DatasetError::Malformed {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }
    let mut transitions = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = parse_row(&line, lineno)?;
        check_transition(&t, lineno)?;
        transitions.push(t);
    }
    let (provenance, seed) = meta
        .as_ref()
        .map(|m| (m.provenance, m.seed))
        .unwrap_or((Provenance::Synthetic, 0));
    let ds = Dataset::new(provenance, seed, transitions);
    if let Some(m) = &meta {
        if m.len != ds.len() {
            return Err(DatasetError::Invalid(format!(
                "sidecar records {} transitions, file has {}",
                m.len,
                ds.len()
            )));
        }
    }
    ds.validate(false)?;
    Ok(ds)
}

fn parse_row(line: &str, lineno: usize) -> Result<Transition, DatasetError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(DatasetError::Malformed {
            line: lineno,
            msg: format!("expected 6 fields, found {}", fields.len()),
        });
    }
    let int = |k: usize, name: &str| -> Result<u64, DatasetError> {
        fields[k].parse().map_err(|_| DatasetError::Malformed {
            line: lineno,
            msg: format!("{name}: cannot parse `{}` as an integer", fields[k]),
        })
    };
    let real = |k: usize, name: &str| -> Result<f64, DatasetError> {
        fields[k].parse().map_err(|_| DatasetError::Malformed {
            line: lineno,
            msg: format!("{name}: cannot parse `{}` as a number", fields[k]),
        })
    };
    Ok(Transition {
        episode: int(0, "episode")?,
        step: int(1, "step")?,
        v: real(2, "v")?,
        v_rel: real(3, "v_rel")?,
        t_h: real(4, "t_h")?,
        action: real(5, "action")?,
    })
}

/// How the demonstration dataset is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertDataConfig {
    pub sim: SimConfig,
    pub gains: ExpertGains,
    pub transitions: usize,
    /// Steps per generated episode.
    pub episode_steps: u64,
}

impl Default for ExpertDataConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            gains: ExpertGains::default(),
            transitions: 15_000,
            episode_steps: 1500,
        }
    }
}

/// Drive the noisy demonstrator behind naturalistic lead profiles and record
/// every `(observation, pedal)` pair until `cfg.transitions` are collected.
pub fn generate_expert(cfg: &ExpertDataConfig, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = cfg.sim.clone().with_episode_len(cfg.episode_steps.max(1));
    let mut out = Vec::with_capacity(cfg.transitions);
    let mut episode = 0u64;
    while out.len() < cfg.transitions {
        let kind = ProfileKind::ALL[rng.gen_range(0..ProfileKind::ALL.len())];
        let profile = gen_lead_profile(kind, &mut rng);
        let mut expert = ExpertFollower::new(cfg.gains, rng.gen());
        let mut world = init_episode(
            &sim,
            &mut rng,
            VelocityRange::exactly(profile.initial_velocity),
        );
        let mut obs = observe(&world, &sim);
        loop {
            let pedal = expert.pedal(&obs);
            out.push(Transition::new(episode, world.step, &obs, pedal));
            if out.len() >= cfg.transitions {
                break;
            }
            let t = world.step as f64 * sim.dt;
            let lead = profile_accel(&profile, t, world.v_lead, sim.dt);
            let (next, next_obs, ev) = step(&world, pedal, lead, &sim);
            world = next;
            obs = next_obs;
            if ev.episode_done {
                break;
            }
        }
        episode += 1;
    }
    Dataset::new(Provenance::Expert, seed, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn synthetic(n: usize, provenance: Provenance) -> Dataset {
        let transitions = (0..n)
            .map(|i| Transition {
                episode: (i / COLLISION_WINDOW) as u64,
                step: (i % COLLISION_WINDOW) as u64,
                v: 20.0 + i as f64 * 0.01,
                v_rel: -0.5,
                t_h: 1.0 + (i % 7) as f64 * 0.1,
                action: ((i % 11) as f64 - 5.0) / 10.0,
            })
            .collect();
        Dataset::new(provenance, 3, transitions)
    }

    #[test]
    fn normalization_cases() {
        let o = |v, v_rel, t_h| Observation { v, v_rel, t_h };
        assert_eq!(normalize(&o(20.0, 0.0, 2.0)), [0.5, 0.0, 0.2]);
        assert_eq!(normalize(&o(40.0, 20.0, 10.0)), [1.0, 1.0, 1.0]);
        assert_eq!(normalize(&o(0.0, -40.0, 0.0)), [0.0, -1.0, 0.0]);
    }

    #[test]
    fn split_ratio_and_determinism() {
        let ds = synthetic(100, Provenance::Expert);
        let s = split_80_20(&ds, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (80, 20));
        assert_eq!(s, split_80_20(&ds, 1).unwrap());
        assert_ne!(s, split_80_20(&ds, 2).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(matches!(
            split_80_20(&synthetic(4, Provenance::Expert), 0),
            Err(DatasetError::TooSmall(4))
        ));
    }

    #[test]
    fn collision_split_is_window_granular() {
        let ds = synthetic(50 * COLLISION_WINDOW, Provenance::Collision);
        let s = split_80_20(&ds, 5).unwrap();
        assert_eq!(s.train.len(), 40 * COLLISION_WINDOW);
        assert_eq!(s.validation.len(), 10 * COLLISION_WINDOW);
        let windows = |idx: &[usize]| {
            let mut w: Vec<usize> = idx.iter().map(|i| i / COLLISION_WINDOW).collect();
            w.dedup();
            w
        };
        let tw = windows(&s.train);
        let vw = windows(&s.validation);
        assert_eq!(tw.len(), 40);
        assert_eq!(vw.len(), 10);
        assert!(tw.iter().all(|w| !vw.contains(w)));
        for chunk in s.train.chunks(COLLISION_WINDOW) {
            assert_eq!(chunk[0] % COLLISION_WINDOW, 0);
            assert!(chunk.windows(2).all(|p| p[1] == p[0] + 1));
        }
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let transitions = (0..1000)
            .map(|i| Transition {
                episode: i / 100,
                step: i % 100,
                v: rng.gen_range(0.0..40.0),
                v_rel: rng.gen_range(-20.0..20.0),
                t_h: rng.gen_range(0.0..10.0),
                action: rng.gen_range(-1.0..=1.0),
            })
            .collect();
        let ds = Dataset::new(Provenance::Expert, 42, transitions);
        write_csv(&ds, &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), ds);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn out_of_range_action_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(
            &path,
            format!("{CSV_HEADER}\n0,0,20,0,2,0.1\n0,1,20,0,2,1.5\n"),
        )
        .unwrap();
        let err = read_csv(&path).unwrap_err();
        assert!(
            matches!(
                err,
                DatasetError::OutOfRange {
                    line: 3,
                    field: "action",
                    ..
                }
            ),
            "{err}"
        );
        assert!(err.to_string().contains("line 3"));
        fs::write(&path, format!("{CSV_HEADER}\n0,0,20,zero,2,0.1\n")).unwrap();
        assert!(matches!(
            read_csv(&path).unwrap_err(),
            DatasetError::Malformed { line: 2, .. }
        ));
    }

    #[test]
    fn header_only_file_is_empty_but_not_trainable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        fs::write(&path, format!("{CSV_HEADER}\n")).unwrap();
        let ds = read_csv(&path).unwrap();
        assert!(ds.is_empty());
        assert!(ds.validate(false).is_ok());
        assert!(ds.validate(true).is_err());
    }

    #[test]
    fn collision_length_must_be_window_multiple() {
        let ds = synthetic(30, Provenance::Collision);
        assert!(ds.validate(false).is_err());
        assert!(split_80_20(&ds, 0).is_err());
    }

    #[test]
    fn expert_generation_is_deterministic_and_sized() {
        let cfg = ExpertDataConfig {
            transitions: 2000,
            episode_steps: 300,
            ..ExpertDataConfig::default()
        };
        let a = generate_expert(&cfg, 4);
        assert_eq!(a.len(), 2000);
        assert_eq!(a, generate_expert(&cfg, 4));
        assert!(a.validate(true).is_ok());
    }

    proptest! {
        #[test]
        fn split_partitions_indices(n in 5usize..400, seed in any::<u64>()) {
            let ds = synthetic(n, Provenance::Expert);
            let s = split_80_20(&ds, seed).unwrap();
            prop_assert_eq!(s.train.len(), (0.8 * n as f64).round() as usize);
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
