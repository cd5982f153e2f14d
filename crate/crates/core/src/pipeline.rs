//! The experiment stages wired together: expert data, imitation follower,
//! collision data, the four trained variants and both test frameworks.
//!
//! Every stage draws its randomness from `derive_seed(config.seed, stage)`.

use std::sync::Arc;

use crate::adversary::{collect_collision_dataset, AdversaryError, CollectionStats};
use crate::checkpoint::Checkpoint;
use crate::config::{derive_seed, RunConfig};
use crate::datasets::{generate_expert, Dataset};
use crate::eval::{
    run_adversarial, run_naturalistic, AdvEvalConfig, AdvReport, NatReport, ScenarioSet,
    VariantReport,
};
use crate::sim::EpisodeLog;
use crate::trainer::{
    train, InferenceMode, ModelKind, ModelVariant, Policy, PolicyFollower, TrainError, TrainOutcome,
};

pub fn expert_dataset(cfg: &RunConfig) -> Dataset {
    generate_expert(&cfg.expert_data(), derive_seed(cfg.seed, "expert"))
}

/// Train one variant. The FFN run additionally snapshots the candidate
/// collection followers.
pub fn train_model(
    cfg: &RunConfig,
    kind: ModelKind,
    expert: &Dataset,
    collisions: Option<&Dataset>,
) -> Result<TrainOutcome, TrainError> {
    let mut hyper = cfg.training.clone();
    // The ablation shares the full model's seed so the KL sub-update is the
    // only difference between the two runs.
    let stage = match kind {
        ModelKind::AmdnNoKl => ModelKind::Amdn.tag(),
        k => k.tag(),
    };
    hyper.seed = derive_seed(cfg.seed, &format!("train-{stage}"));
    if kind == ModelKind::Ffn {
        hyper.snapshot_steps = cfg.follower_steps();
    }
    train(kind, expert, collisions, &hyper)
}

pub fn follower(
    ck: &Checkpoint,
    mode: InferenceMode,
    seed: u64,
) -> Result<PolicyFollower, TrainError> {
    Ok(PolicyFollower::new(
        Arc::new(Policy::from_checkpoint(ck)?),
        mode,
        seed,
    ))
}

/// Probe result for one candidate follower snapshot.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FollowerProbe {
    pub step: u64,
    pub collision_rate: f64,
}

/// Pick the most-trained snapshot that fresh adversaries crash into at least
/// `min_collision_rate` of the time; falls back to the most exploitable one.
pub fn select_follower<'a>(
    cfg: &RunConfig,
    snapshots: &'a [Checkpoint],
) -> Result<(&'a Checkpoint, Vec<FollowerProbe>), PipelineError> {
    let mut ordered: Vec<&Checkpoint> = snapshots.iter().collect();
    ordered.sort_by_key(|c| std::cmp::Reverse(c.metadata.steps));
    let probe_cfg = AdvEvalConfig {
        n_adversaries: 1,
        max_episodes: cfg.follower.probe_episodes,
        adversary: cfg.collection.adversary.clone(),
    };
    let mut probes = Vec::new();
    for ck in &ordered {
        let f = follower(ck, InferenceMode::Mean, 0)?;
        let r = run_adversarial(
            &f,
            &probe_cfg,
            &cfg.sim,
            derive_seed(cfg.seed, "follower-probe"),
        )?;
        let rate = r.collisions_total as f64 / probe_cfg.max_episodes as f64;
        log::info!(
            "follower snapshot at step {}: probe collision rate {rate:.3}",
            ck.metadata.steps
        );
        probes.push(FollowerProbe {
            step: ck.metadata.steps,
            collision_rate: rate,
        });
        if rate >= cfg.follower.min_collision_rate {
            return Ok((ck, probes));
        }
    }
    let best = probes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.collision_rate.total_cmp(&b.1.collision_rate))
        .map(|(i, _)| i)
        .ok_or(PipelineError::NoFollower)?;
    Ok((ordered[best], probes))
}

pub fn collision_dataset(
    cfg: &RunConfig,
    follower_ck: &Checkpoint,
) -> Result<(Dataset, CollectionStats), PipelineError> {
    let f = follower(follower_ck, InferenceMode::Mean, 0)?;
    Ok(collect_collision_dataset(
        &cfg.collection_config(),
        &f,
        &cfg.sim,
        derive_seed(cfg.seed, "collisions"),
    )?)
}

pub fn scenario_set(cfg: &RunConfig) -> ScenarioSet {
    ScenarioSet::generate(cfg.scenarios.count, cfg.scenarios.seed)
}

pub fn naturalistic(
    cfg: &RunConfig,
    scenarios: &ScenarioSet,
    ck: &Checkpoint,
    mode: InferenceMode,
    keep_logs: bool,
) -> Result<(NatReport, Vec<EpisodeLog>), TrainError> {
    let f = follower(ck, mode, 0)?;
    Ok(run_naturalistic(
        &f,
        scenarios,
        &cfg.sim,
        derive_seed(cfg.seed, "eval-nat"),
        keep_logs,
    ))
}

pub fn adversarial(
    cfg: &RunConfig,
    ck: &Checkpoint,
    mode: InferenceMode,
) -> Result<AdvReport, PipelineError> {
    let f = follower(ck, mode, 0)?;
    Ok(run_adversarial(
        &f,
        &cfg.adversarial,
        &cfg.sim,
        derive_seed(cfg.seed, "eval-adv"),
    )?)
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error("no follower snapshots to choose from")]
    NoFollower,
}

/// Trained checkpoints of one seed, keyed by model kind.
#[derive(Debug, Clone)]
pub struct TrainedSet {
    pub outcomes: Vec<(ModelKind, TrainOutcome)>,
}

impl TrainedSet {
    pub fn checkpoint(&self, kind: ModelKind) -> Option<&Checkpoint> {
        self.outcomes
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, o)| &o.checkpoint)
    }
}

pub fn train_all(
    cfg: &RunConfig,
    kinds: &[ModelKind],
    expert: &Dataset,
    collisions: Option<&Dataset>,
) -> Result<TrainedSet, TrainError> {
    let outcomes = kinds
        .iter()
        .map(|&k| train_model(cfg, k, expert, collisions).map(|o| (k, o)))
        .collect::<Result<_, _>>()?;
    Ok(TrainedSet { outcomes })
}

/// Run the requested test frameworks for each variant whose model was trained.
pub fn evaluate_all(
    cfg: &RunConfig,
    trained: &TrainedSet,
    variants: &[ModelVariant],
    naturalistic_tests: bool,
    adversarial_tests: bool,
) -> Result<Vec<VariantReport>, PipelineError> {
    let scenarios = scenario_set(cfg);
    let mut reports = Vec::new();
    for v in variants {
        let Some(ck) = trained.checkpoint(v.kind) else {
            continue;
        };
        let nat = if naturalistic_tests {
            Some(naturalistic(cfg, &scenarios, ck, v.inference, false)?.0)
        } else {
            None
        };
        let adv = if adversarial_tests {
            Some(adversarial(cfg, ck, v.inference)?)
        } else {
            None
        };
        log::info!("evaluated {}", v.tag());
        reports.push(VariantReport {
            variant: v.tag(),
            naturalistic: nat,
            adversarial: adv,
        });
    }
    Ok(reports)
}
