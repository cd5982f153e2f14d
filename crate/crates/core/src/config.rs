//! Run configuration, seed derivation, content hashing and output manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::CollectionConfig;
use crate::datasets::ExpertDataConfig;
use crate::drivers::ExpertGains;
use crate::eval::AdvEvalConfig;
use crate::sim::SimConfig;
use crate::trainer::Hyperparams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("invalid config field `{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertSection {
    pub gains: ExpertGains,
    pub transitions: usize,
    pub episode_steps: u64,
}

impl Default for ExpertSection {
    fn default() -> Self {
        let d = ExpertDataConfig::default();
        Self {
            gains: d.gains,
            transitions: d.transitions,
            episode_steps: d.episode_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub count: usize,
    pub seed: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            count: 120,
            seed: 0,
        }
    }
}

/// How the imitation follower that drives the host vehicle during collision
/// gathering is chosen among early FFN training snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FollowerSection {
    /// Candidate snapshot steps, tried from most to least trained.
    pub candidate_steps: Vec<u64>,
    /// Adversary training episodes used to measure each candidate.
    pub probe_episodes: usize,
    /// The first candidate whose probe collision rate reaches this is used.
    pub min_collision_rate: f64,
}

impl Default for FollowerSection {
    fn default() -> Self {
        Self {
            candidate_steps: vec![1000, 800, 600, 500, 400, 300, 200],
            probe_episodes: 100,
            min_collision_rate: 0.05,
        }
    }
}

/// Everything a pipeline command needs. Defaults are the desk-scale setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Multiplies the expert transition count and the collision count.
    pub scale: f64,
    pub sim: SimConfig,
    pub expert: ExpertSection,
    pub training: Hyperparams,
    pub follower: FollowerSection,
    pub collection: CollectionConfig,
    pub adversarial: AdvEvalConfig,
    pub scenarios: ScenarioSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 1.0,
            sim: SimConfig::default(),
            expert: ExpertSection::default(),
            training: Hyperparams::default(),
            follower: FollowerSection::default(),
            collection: CollectionConfig::default(),
            adversarial: AdvEvalConfig::default(),
            scenarios: ScenarioSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, msg: String| ConfigError::Invalid { field, msg };
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(invalid("scale", format!("must be > 0, got {}", self.scale)));
        }
        self.sim.validate().map_err(|m| invalid("sim", m))?;
        self.expert
            .gains
            .validate()
            .map_err(|m| invalid("expert.gains", m))?;
        self.training
            .validate()
            .map_err(|e| invalid("training", e.to_string()))?;
        self.collection
            .adversary
            .constraints
            .validate()
            .map_err(|m| invalid("collection.adversary.constraints", m))?;
        self.adversarial
            .adversary
            .constraints
            .validate()
            .map_err(|m| invalid("adversarial.adversary.constraints", m))?;
        if self.follower.candidate_steps.contains(&0) || self.follower_steps().is_empty() {
            return Err(invalid(
                "follower.candidate_steps",
                format!(
                    "need at least one nonzero step <= {}",
                    self.training.training_steps
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.follower.min_collision_rate)
            || self.follower.probe_episodes == 0
        {
            return Err(invalid(
                "follower",
                "min_collision_rate must lie in [0, 1] and probe_episodes be >= 1".into(),
            ));
        }
        if self.scenarios.count == 0 {
            return Err(invalid("scenarios.count", "must be >= 1".into()));
        }
        Ok(())
    }

    /// Candidate follower steps reachable within the training run.
    pub fn follower_steps(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = self
            .follower
            .candidate_steps
            .iter()
            .copied()
            .filter(|&s| s <= self.training.training_steps)
            .collect();
        steps.sort_unstable_by(|a, b| b.cmp(a));
        steps.dedup();
        steps
    }

    pub fn expert_data(&self) -> ExpertDataConfig {
        ExpertDataConfig {
            sim: self.sim.clone(),
            gains: self.expert.gains,
            transitions: scaled(self.expert.transitions, self.scale),
            episode_steps: self.expert.episode_steps,
        }
    }

    pub fn collection_config(&self) -> CollectionConfig {
        CollectionConfig {
            n_collisions: scaled(self.collection.n_collisions, self.scale),
            ..self.collection.clone()
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

fn scaled(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(1)
}

/// Independent, stable seed for one pipeline stage.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub name: String,
    /// Path relative to the output directory.
    pub file: String,
    pub sha256: String,
}

/// Provenance of one command invocation. Carries no timestamps, so repeated
/// runs with the same inputs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub args: BTreeMap<String, String>,
    pub inputs: Vec<ArtifactRecord>,
    pub outputs: Vec<ArtifactRecord>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            config: config.clone(),
            args: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn record(dir: &Path, name: &str, file: &str) -> std::io::Result<ArtifactRecord> {
        Ok(ArtifactRecord {
            name: name.to_string(),
            file: file.to_string(),
            sha256: sha256_file(&dir.join(file))?,
        })
    }

    pub fn add_input(&mut self, dir: &Path, name: &str, file: &str) -> std::io::Result<()> {
        self.inputs.push(Self::record(dir, name, file)?);
        Ok(())
    }

    pub fn add_output(&mut self, dir: &Path, name: &str, file: &str) -> std::io::Result<()> {
        self.outputs.push(Self::record(dir, name, file)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(
            path,
            serde_json::to_string_pretty(self).expect("manifest serializes") + "\n",
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_hash_is_stable() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json(), "mem").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let other = RunConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 4, "training": {"training_steps": 50}, "follower": {"candidate_steps": [50, 80]}}"#, "mem").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.training.training_steps, 50);
        assert_eq!(cfg.training.eta_s, 1e-4);
        assert_eq!(cfg.follower_steps(), vec![50]);
        assert_eq!(cfg.sim, SimConfig::default());
    }

    #[test]
    fn parse_errors_carry_position_and_field() {
        let err =
            RunConfig::from_json("{\n  \"seed\": 1,\n  \"sedd\": 2\n}", "cfg.json").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Parse { line: 3, .. }), "{msg}");
        assert!(msg.contains("sedd"), "{msg}");
        let err = RunConfig::from_json(r#"{"scale": 0}"#, "cfg.json").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "scale", .. }));
        let err = RunConfig::from_json(r#"{"sim": {"dt": "x"}}"#, "cfg.json").unwrap_err();
        assert!(err.to_string().contains("cfg.json: line 1"), "{err}");
    }

    #[test]
    fn scale_multiplies_dataset_sizes() {
        let cfg = RunConfig {
            scale: 0.5,
            ..RunConfig::default()
        };
        assert_eq!(cfg.expert_data().transitions, 7500);
        assert_eq!(cfg.collection_config().n_collisions, 220);
    }

    #[test]
    fn derived_seeds_differ_by_stage() {
        assert_eq!(derive_seed(3, "expert"), derive_seed(3, "expert"));
        assert_ne!(derive_seed(3, "expert"), derive_seed(3, "collisions"));
        assert_ne!(derive_seed(3, "expert"), derive_seed(4, "expert"));
    }

    #[test]
    fn file_hash_matches_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
