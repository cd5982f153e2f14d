//! Training loops for the FFN, MDN and AMDN policy variants, and inference
//! from the resulting checkpoints.
//!
//! An AMDN network has four raw outputs on one shared trunk, ordered
//! `(mu_s, var_s, mu_c, var_c)`. Each training step applies three sequential
//! sub-updates, each with its own Adam accumulators:
//!
//! 1. NLL of the safe head on an expert batch, learning rate `eta_s`;
//! 2. NLL of the unsafe head on a collision batch, learning rate `eta_c`;
//! 3. `-D_KL(N^s || N^c)` on the collision batch states, learning rate
//!    `eta_kl`. The unsafe head is detached: only the safe outputs receive a
//!    gradient, which then flows through the trunk.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError, TrainingMeta};
use crate::datasets::{normalize, split_80_20, Dataset, DatasetError, Transition};
use crate::drivers::Follower;
use crate::fmt::fmt_f64;
use crate::heads::{self, kl_gauss, kl_grads_p, nll, nll_grads, raw_grads, GaussParams};
use crate::nnet::{
    adam_step, AdamState, ForwardTrace, Gradients, NetworkParams, NetworkSpec, NnetError,
};
use crate::sim::Observation;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("missing input dataset `{0}`")]
    MissingInput(&'static str),
    #[error("non-finite {loss} loss at step {step}; offending batch starts with {dump}")]
    NonFinite {
        loss: &'static str,
        step: u64,
        dump: String,
    },
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("unknown model variant `{0}`")]
    UnknownVariant(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "ffn")]
    Ffn,
    #[serde(rename = "mdn")]
    Mdn,
    #[serde(rename = "amdn-nokl")]
    AmdnNoKl,
    #[serde(rename = "amdn")]
    Amdn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Ffn,
        ModelKind::Mdn,
        ModelKind::AmdnNoKl,
        ModelKind::Amdn,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Ffn => "ffn",
            ModelKind::Mdn => "mdn",
            ModelKind::AmdnNoKl => "amdn-nokl",
            ModelKind::Amdn => "amdn",
        }
    }

    pub fn head_outputs(self) -> usize {
        match self {
            ModelKind::Ffn => 1,
            ModelKind::Mdn => 2,
            ModelKind::AmdnNoKl | ModelKind::Amdn => 4,
        }
    }

    pub fn needs_collisions(self) -> bool {
        matches!(self, ModelKind::AmdnNoKl | ModelKind::Amdn)
    }

    pub fn spec(self) -> NetworkSpec {
        NetworkSpec::with_heads(self.head_outputs())
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ffn" => Ok(ModelKind::Ffn),
            "mdn" => Ok(ModelKind::Mdn),
            "amdn-nokl" | "amdn_nokl" => Ok(ModelKind::AmdnNoKl),
            "amdn" => Ok(ModelKind::Amdn),
            other => Err(TrainError::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Use the safe-head mean as the pedal.
    #[default]
    Mean,
    /// Draw the pedal from the safe-head Gaussian.
    Sampling,
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InferenceMode::Mean => "mean",
            InferenceMode::Sampling => "sampling",
        })
    }
}

impl FromStr for InferenceMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(InferenceMode::Mean),
            "sampling" => Ok(InferenceMode::Sampling),
            other => Err(TrainError::UnknownVariant(other.to_string())),
        }
    }
}

/// A trained model plus how it is queried at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelVariant {
    pub kind: ModelKind,
    pub inference: InferenceMode,
}

impl ModelVariant {
    pub fn new(kind: ModelKind, inference: InferenceMode) -> Self {
        let inference = if kind == ModelKind::Ffn {
            InferenceMode::Mean
        } else {
            inference
        };
        Self { kind, inference }
    }

    pub fn mean(kind: ModelKind) -> Self {
        Self::new(kind, InferenceMode::Mean)
    }

    /// The five evaluated configurations, in report column order.
    pub fn report_set() -> [ModelVariant; 5] {
        [
            Self::mean(ModelKind::Ffn),
            Self::mean(ModelKind::Mdn),
            Self::mean(ModelKind::AmdnNoKl),
            Self::new(ModelKind::Amdn, InferenceMode::Sampling),
            Self::mean(ModelKind::Amdn),
        ]
    }

    pub fn tag(&self) -> String {
        match self.inference {
            InferenceMode::Sampling => format!("{}-sampling", self.kind.tag()),
            InferenceMode::Mean => self.kind.tag().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub eta_s: f64,
    pub eta_c: f64,
    pub eta_kl: f64,
    pub batch_size: usize,
    pub training_steps: u64,
    pub log_interval: u64,
    /// Upper bound on validation samples scored at each log point.
    pub validation_cap: usize,
    pub seed: u64,
    /// Steps at which the current (not best) parameters are also saved.
    pub snapshot_steps: Vec<u64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            eta_s: 1e-4,
            eta_c: 1e-5,
            eta_kl: 1e-9,
            batch_size: 100,
            training_steps: 100_000,
            log_interval: 1000,
            validation_cap: 4000,
            seed: 0,
            snapshot_steps: Vec::new(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let rates = [
            ("eta_s", self.eta_s),
            ("eta_c", self.eta_c),
            ("eta_kl", self.eta_kl),
        ];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Hyper(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.batch_size == 0 || self.log_interval == 0 {
            return Err(TrainError::Hyper(
                "batch_size and log_interval must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Mean losses of one training step. `safe` is the MSE for FFN and the safe
/// NLL otherwise; `unsafe_` and `kl` are only present for AMDN models.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub safe: f64,
    pub unsafe_: Option<f64>,
    pub kl: Option<f64>,
}

/// Independent Adam accumulators for the three sub-updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamStates {
    pub safe: AdamState,
    pub unsafe_: AdamState,
    pub kl: AdamState,
}

impl AdamStates {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self {
            safe: AdamState::new(spec),
            unsafe_: AdamState::new(spec),
            kl: AdamState::new(spec),
        }
    }
}

/// Reusable per-batch buffers.
#[derive(Debug, Clone)]
pub struct Workspace {
    traces: Vec<ForwardTrace>,
    grads: Gradients,
    head_grads: Vec<f64>,
}

impl Workspace {
    pub fn new(spec: &NetworkSpec, batch: usize) -> Self {
        Self {
            traces: (0..batch).map(|_| ForwardTrace::for_spec(spec)).collect(),
            grads: Gradients::zeros(spec),
            head_grads: vec![0.0; spec.head_outputs],
        }
    }

    fn ensure(&mut self, spec: &NetworkSpec, batch: usize) {
        while self.traces.len() < batch {
            self.traces.push(ForwardTrace::for_spec(spec));
        }
    }
}

/// Mean loss and mean gradient over a batch. `per_sample` receives the raw
/// head outputs and the sample, writes `d loss / d raw` into its output slice,
/// and returns the sample loss.
fn batch_gradient<F>(
    params: &NetworkParams,
    batch: &[Transition],
    ws: &mut Workspace,
    mut per_sample: F,
) -> Result<f64, NnetError>
where
    F: FnMut(&[f64], &Transition, &mut [f64]) -> f64,
{
    ws.ensure(params.spec(), batch.len());
    ws.grads.fill_zero();
    let mut total = 0.0;
    for (t, trace) in batch.iter().zip(ws.traces.iter_mut()) {
        params.forward_into(&t.features(), trace)?;
        ws.head_grads.iter_mut().for_each(|g| *g = 0.0);
        total += per_sample(trace.heads(), t, &mut ws.head_grads);
        params.accumulate_backward(trace, &ws.head_grads, &mut ws.grads)?;
    }
    let n = batch.len().max(1) as f64;
    ws.grads.scale(1.0 / n);
    Ok(total / n)
}

fn dump(batch: &[Transition]) -> String {
    batch
        .iter()
        .take(5)
        .map(|t| {
            format!(
                "(v={}, v_rel={}, t_h={}, a={})",
                t.v, t.v_rel, t.t_h, t.action
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn check(
    loss: f64,
    grads: &Gradients,
    name: &'static str,
    step: u64,
    batch: &[Transition],
) -> Result<(), TrainError> {
    if loss.is_finite() && grads.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite {
            loss: name,
            step,
            dump: dump(batch),
        })
    }
}

/// Safe-head NLL (raw outputs 0 and 1).
pub fn safe_nll_sample(raw: &[f64], t: &Transition, out: &mut [f64]) -> f64 {
    let g = GaussParams::from_raw(raw[0], raw[1]);
    let (dm, dv) = nll_grads(g, t.action);
    let (r0, r1) = raw_grads(raw[0], raw[1], dm, dv);
    out[0] = r0;
    out[1] = r1;
    nll(g, t.action)
}

/// Unsafe-head NLL (raw outputs 2 and 3).
pub fn unsafe_nll_sample(raw: &[f64], t: &Transition, out: &mut [f64]) -> f64 {
    let g = GaussParams::from_raw(raw[2], raw[3]);
    let (dm, dv) = nll_grads(g, t.action);
    let (r2, r3) = raw_grads(raw[2], raw[3], dm, dv);
    out[2] = r2;
    out[3] = r3;
    nll(g, t.action)
}

/// `-D_KL(N^s || N^c)` with the unsafe outputs treated as constants. Returns
/// the (positive) KL value; the written gradient is that of its negation.
pub fn neg_kl_sample(raw: &[f64], _t: &Transition, out: &mut [f64]) -> f64 {
    let p = GaussParams::from_raw(raw[0], raw[1]);
    let q = GaussParams::from_raw(raw[2], raw[3]);
    let (dm, dv) = kl_grads_p(p, q);
    let (r0, r1) = raw_grads(raw[0], raw[1], -dm, -dv);
    out[0] = r0;
    out[1] = r1;
    kl_gauss(p, q)
}

/// Squared error of the tanh-squashed single output.
pub fn ffn_mse_sample(raw: &[f64], t: &Transition, out: &mut [f64]) -> f64 {
    let y = raw[0].tanh();
    let e = y - t.action;
    out[0] = 2.0 * e * (1.0 - y * y);
    e * e
}

/// One three-part AMDN step. With `eta_kl = 0` the KL sub-update is skipped
/// and the step equals the two-loss (w/o KL) update; the KL value is still
/// measured on `batch_c` for logging.
#[allow(clippy::too_many_arguments)]
pub fn train_step_amdn(
    params: &mut NetworkParams,
    states: &mut AdamStates,
    batch_e: &[Transition],
    batch_c: &[Transition],
    hyper: &Hyperparams,
    ws: &mut Workspace,
    step: u64,
) -> Result<StepLosses, TrainError> {
    let safe = batch_gradient(params, batch_e, ws, safe_nll_sample)?;
    check(safe, &ws.grads, "safe NLL", step, batch_e)?;
    adam_step(params, &ws.grads, &mut states.safe, hyper.eta_s)?;

    let unsafe_ = batch_gradient(params, batch_c, ws, unsafe_nll_sample)?;
    check(unsafe_, &ws.grads, "unsafe NLL", step, batch_c)?;
    adam_step(params, &ws.grads, &mut states.unsafe_, hyper.eta_c)?;

    let kl = if hyper.eta_kl > 0.0 {
        kl_sub_update(params, &mut states.kl, batch_c, hyper.eta_kl, ws, step)?
    } else {
        mean_kl(params, batch_c)?
    };
    Ok(StepLosses {
        safe,
        unsafe_: Some(unsafe_),
        kl: Some(kl),
    })
}

/// The KL ascent sub-update alone. Only the trunk and the safe-head outputs
/// receive gradient; returns the batch mean KL before the update.
pub fn kl_sub_update(
    params: &mut NetworkParams,
    state: &mut AdamState,
    batch_c: &[Transition],
    eta_kl: f64,
    ws: &mut Workspace,
    step: u64,
) -> Result<f64, TrainError> {
    let kl = batch_gradient(params, batch_c, ws, neg_kl_sample)?;
    check(kl, &ws.grads, "KL", step, batch_c)?;
    adam_step(params, &ws.grads, state, eta_kl)?;
    Ok(kl)
}

/// Single-loss step used by FFN (MSE) and MDN (safe NLL).
pub fn train_step_single(
    kind: ModelKind,
    params: &mut NetworkParams,
    state: &mut AdamState,
    batch_e: &[Transition],
    hyper: &Hyperparams,
    ws: &mut Workspace,
    step: u64,
) -> Result<StepLosses, TrainError> {
    let (loss, name) = match kind {
        ModelKind::Ffn => (batch_gradient(params, batch_e, ws, ffn_mse_sample)?, "MSE"),
        ModelKind::Mdn => (
            batch_gradient(params, batch_e, ws, safe_nll_sample)?,
            "safe NLL",
        ),
        _ => {
            return Err(TrainError::UnknownVariant(format!(
                "{kind} is not a single-loss model"
            )))
        }
    };
    check(loss, &ws.grads, name, step, batch_e)?;
    adam_step(params, &ws.grads, state, hyper.eta_s)?;
    Ok(StepLosses {
        safe: loss,
        ..Default::default()
    })
}

fn mean_kl(params: &NetworkParams, batch: &[Transition]) -> Result<f64, NnetError> {
    let mut trace = ForwardTrace::for_spec(params.spec());
    let mut total = 0.0;
    for t in batch {
        params.forward_into(&t.features(), &mut trace)?;
        let h = trace.heads();
        total += kl_gauss(
            GaussParams::from_raw(h[0], h[1]),
            GaussParams::from_raw(h[2], h[3]),
        );
    }
    Ok(total / batch.len().max(1) as f64)
}

/// Validation scores on held-out data.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ValidationScores {
    /// MSE for FFN, safe NLL otherwise.
    pub safe: f64,
    pub unsafe_nll: Option<f64>,
    pub kl: Option<f64>,
}

pub fn validate(
    kind: ModelKind,
    params: &NetworkParams,
    expert_val: &[Transition],
    collision_val: &[Transition],
) -> Result<ValidationScores, NnetError> {
    let mut trace = ForwardTrace::for_spec(params.spec());
    let mut scratch = vec![0.0; kind.head_outputs()];
    let mut safe = 0.0;
    for t in expert_val {
        params.forward_into(&t.features(), &mut trace)?;
        safe += match kind {
            ModelKind::Ffn => ffn_mse_sample(trace.heads(), t, &mut scratch),
            _ => safe_nll_sample(trace.heads(), t, &mut scratch),
        };
    }
    let mut scores = ValidationScores {
        safe: safe / expert_val.len().max(1) as f64,
        ..Default::default()
    };
    if kind.needs_collisions() && !collision_val.is_empty() {
        let mut u = 0.0;
        let mut k = 0.0;
        for t in collision_val {
            params.forward_into(&t.features(), &mut trace)?;
            u += unsafe_nll_sample(trace.heads(), t, &mut scratch);
            k += neg_kl_sample(trace.heads(), t, &mut scratch);
        }
        let n = collision_val.len() as f64;
        scores.unsafe_nll = Some(u / n);
        scores.kl = Some(k / n);
    }
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub train_safe: f64,
    pub train_unsafe_nll: Option<f64>,
    pub train_kl: Option<f64>,
    pub val_safe: f64,
    pub val_unsafe_nll: Option<f64>,
    pub val_kl: Option<f64>,
}

pub const TRAIN_LOG_HEADER: &str =
    "step,train_safe,train_unsafe_nll,train_kl,val_safe,val_unsafe_nll,val_kl";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        writeln!(w, "{TRAIN_LOG_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step,
                fmt_f64(r.train_safe),
                opt(r.train_unsafe_nll),
                opt(r.train_kl),
                fmt_f64(r.val_safe),
                opt(r.val_unsafe_nll),
                opt(r.val_kl)
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation score.
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub final_params: NetworkParams,
    pub best_validation: ValidationScores,
    /// Checkpoints taken at `Hyperparams::snapshot_steps`, in step order.
    pub snapshots: Vec<Checkpoint>,
}

fn sample_batch(
    rng: &mut ChaCha8Rng,
    ds: &Dataset,
    pool: &[usize],
    n: usize,
    out: &mut Vec<Transition>,
) {
    out.clear();
    for _ in 0..n {
        out.push(ds.transitions[pool[rng.gen_range(0..pool.len())]]);
    }
}

/// Train one model variant. FFN and MDN use only the expert dataset; both
/// AMDN variants also require the collision dataset.
pub fn train(
    kind: ModelKind,
    expert: &Dataset,
    collisions: Option<&Dataset>,
    hyper: &Hyperparams,
) -> Result<TrainOutcome, TrainError> {
    hyper.validate()?;
    expert.validate(true)?;
    let collisions = match (kind.needs_collisions(), collisions) {
        (true, None) => return Err(TrainError::MissingInput("collisions")),
        (true, Some(c)) => {
            c.validate(true)?;
            Some(c)
        }
        (false, _) => None,
    };
    let hyper = if kind == ModelKind::AmdnNoKl {
        Hyperparams {
            eta_kl: 0.0,
            ..hyper.clone()
        }
    } else {
        hyper.clone()
    };

    let e_split = split_80_20(expert, hyper.seed ^ 0x0005_EEDE)?;
    let c_split = collisions
        .map(|c| split_80_20(c, hyper.seed ^ 0x0005_EEDC))
        .transpose()?;
    if e_split.train.len() < hyper.batch_size {
        return Err(TrainError::Hyper(format!(
            "batch_size {} exceeds expert training split of {}",
            hyper.batch_size,
            e_split.train.len()
        )));
    }
    let cap = |idx: &[usize]| idx[..idx.len().min(hyper.validation_cap)].to_vec();
    let expert_val = expert.subset(&cap(&e_split.validation));
    let collision_val = match (collisions, &c_split) {
        (Some(c), Some(s)) => c.subset(&cap(&s.validation)),
        _ => Vec::new(),
    };

    let spec = kind.spec();
    let mut params = NetworkParams::init(spec, hyper.seed)?;
    let mut states = AdamStates::new(&spec);
    let mut ws = Workspace::new(&spec, hyper.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(
        hyper
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(1),
    );
    let mut batch_e = Vec::with_capacity(hyper.batch_size);
    let mut batch_c = Vec::with_capacity(hyper.batch_size);

    let mut log = TrainLog::default();
    let mut best = validate(kind, &params, &expert_val, &collision_val)?;
    let mut best_params = params.clone();
    let mut best_step = 0;
    let (mut acc_safe, mut acc_unsafe, mut acc_kl, mut acc_n) = (0.0, 0.0, 0.0, 0u64);
    let mut snapshots = Vec::new();

    for step in 1..=hyper.training_steps {
        sample_batch(
            &mut rng,
            expert,
            &e_split.train,
            hyper.batch_size,
            &mut batch_e,
        );
        let losses = match (collisions, &c_split) {
            (Some(c), Some(s)) => {
                sample_batch(&mut rng, c, &s.train, hyper.batch_size, &mut batch_c);
                train_step_amdn(
                    &mut params,
                    &mut states,
                    &batch_e,
                    &batch_c,
                    &hyper,
                    &mut ws,
                    step,
                )?
            }
            _ => train_step_single(
                kind,
                &mut params,
                &mut states.safe,
                &batch_e,
                &hyper,
                &mut ws,
                step,
            )?,
        };
        acc_safe += losses.safe;
        acc_unsafe += losses.unsafe_.unwrap_or(0.0);
        acc_kl += losses.kl.unwrap_or(0.0);
        acc_n += 1;
        if hyper.snapshot_steps.contains(&step) {
            let meta = TrainingMeta {
                seed: hyper.seed,
                steps: step,
                best_step: None,
                ..Default::default()
            };
            snapshots.push(Checkpoint::from_params(kind.tag(), &params, meta));
        }

        if step % hyper.log_interval == 0 || step == hyper.training_steps {
            let scores = validate(kind, &params, &expert_val, &collision_val)?;
            let n = acc_n as f64;
            let amdn = kind.needs_collisions();
            log.rows.push(TrainLogRow {
                step,
                train_safe: acc_safe / n,
                train_unsafe_nll: amdn.then_some(acc_unsafe / n),
                train_kl: amdn.then_some(acc_kl / n),
                val_safe: scores.safe,
                val_unsafe_nll: scores.unsafe_nll,
                val_kl: scores.kl,
            });
            log::debug!(
                "{kind} step {step}: train {:.6} val {:.6}",
                acc_safe / n,
                scores.safe
            );
            (acc_safe, acc_unsafe, acc_kl, acc_n) = (0.0, 0.0, 0.0, 0);
            if scores.safe < best.safe {
                best = scores;
                best_params = params.clone();
                best_step = step;
            }
        }
    }

    let mut meta = TrainingMeta {
        seed: hyper.seed,
        steps: hyper.training_steps,
        best_step: Some(best_step),
        ..Default::default()
    };
    meta.extra.insert(
        "hyperparams".into(),
        serde_json::to_value(&hyper).expect("serializable"),
    );
    meta.extra.insert(
        "validation_metric".into(),
        serde_json::json!(if kind == ModelKind::Ffn {
            "mse"
        } else {
            "nll_s"
        }),
    );
    meta.extra
        .insert("best_validation".into(), serde_json::json!(best.safe));
    meta.extra.insert(
        "input_normalization".into(),
        serde_json::json!(crate::datasets::NORMALIZATION),
    );
    if kind.needs_collisions() {
        meta.extra.insert(
            "kl_gradient_path".into(),
            serde_json::json!("safe head and shared trunk; unsafe head detached"),
        );
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_params(kind.tag(), &best_params, meta),
        log,
        final_params: params,
        best_validation: best,
        snapshots,
    })
}

/// A loaded network ready for inference.
#[derive(Debug, Clone)]
pub struct Policy {
    pub kind: ModelKind,
    pub params: NetworkParams,
}

impl Policy {
    pub fn new(kind: ModelKind, params: NetworkParams) -> Result<Self, TrainError> {
        if params.spec().head_outputs != kind.head_outputs() || params.spec().input_dim != 3 {
            return Err(TrainError::Nnet(NnetError::DimensionMismatch {
                what: "policy head outputs",
                expected: kind.head_outputs(),
                got: params.spec().head_outputs,
            }));
        }
        Ok(Self { kind, params })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        Self::new(ck.variant.parse()?, ck.to_params()?)
    }

    /// Safe-action distribution (FFN: a point mass at its output, variance 0).
    pub fn safe_distribution(&self, obs: &Observation, trace: &mut ForwardTrace) -> GaussParams {
        self.params
            .forward_into(&normalize(obs), trace)
            .expect("policy input dimension is 3");
        let h = trace.heads();
        match self.kind {
            ModelKind::Ffn => GaussParams::new(h[0].tanh(), 0.0),
            _ => GaussParams::from_raw(h[0], h[1]),
        }
    }

    pub fn infer<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        mode: InferenceMode,
        rng: &mut R,
        trace: &mut ForwardTrace,
    ) -> f64 {
        let g = self.safe_distribution(obs, trace);
        match (self.kind, mode) {
            (ModelKind::Ffn, _) | (_, InferenceMode::Mean) => g.mu,
            (_, InferenceMode::Sampling) => heads::sample(g, rng),
        }
    }
}

pub fn infer_pedal<R: Rng + ?Sized>(
    checkpoint: &Checkpoint,
    obs: &Observation,
    mode: InferenceMode,
    rng: &mut R,
) -> Result<f64, TrainError> {
    let policy = Policy::from_checkpoint(checkpoint)?;
    let mut trace = ForwardTrace::for_spec(policy.params.spec());
    Ok(policy.infer(obs, mode, rng, &mut trace))
}

/// A frozen policy driving the host vehicle.
#[derive(Debug, Clone)]
pub struct PolicyFollower {
    policy: Arc<Policy>,
    mode: InferenceMode,
    rng: ChaCha8Rng,
    trace: ForwardTrace,
}

impl PolicyFollower {
    pub fn new(policy: Arc<Policy>, mode: InferenceMode, seed: u64) -> Self {
        let trace = ForwardTrace::for_spec(policy.params.spec());
        Self {
            policy,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace,
        }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }
}

impl Follower for PolicyFollower {
    fn pedal(&mut self, obs: &Observation) -> f64 {
        self.policy
            .infer(obs, self.mode, &mut self.rng, &mut self.trace)
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Provenance;

    fn transition(t_h: f64, action: f64) -> Transition {
        Transition {
            episode: 0,
            step: 0,
            v: 20.0,
            v_rel: 0.5,
            t_h,
            action,
        }
    }

    fn small_hyper() -> Hyperparams {
        Hyperparams {
            batch_size: 4,
            training_steps: 20,
            log_interval: 5,
            ..Default::default()
        }
    }

    #[test]
    fn variant_tags_roundtrip() {
        for k in ModelKind::ALL {
            assert_eq!(k.tag().parse::<ModelKind>().unwrap(), k);
        }
        assert!("gan".parse::<ModelKind>().is_err());
        let tags: Vec<String> = ModelVariant::report_set().iter().map(|v| v.tag()).collect();
        assert_eq!(tags, ["ffn", "mdn", "amdn-nokl", "amdn-sampling", "amdn"]);
        assert_eq!(
            ModelVariant::new(ModelKind::Ffn, InferenceMode::Sampling).inference,
            InferenceMode::Mean
        );
    }

    #[test]
    fn zero_rates_leave_params_bit_identical() {
        let spec = ModelKind::Amdn.spec();
        let mut params = NetworkParams::init(spec, 3).unwrap();
        let before = params.clone();
        let mut states = AdamStates::new(&spec);
        let hyper = Hyperparams {
            eta_s: 0.0,
            eta_c: 0.0,
            eta_kl: 0.0,
            ..Default::default()
        };
        let be = vec![transition(2.0, 0.1), transition(1.5, -0.3)];
        let bc = vec![transition(0.3, 0.8), transition(0.1, 0.9)];
        let mut ws = Workspace::new(&spec, 2);
        let l = train_step_amdn(&mut params, &mut states, &be, &bc, &hyper, &mut ws, 1).unwrap();
        assert_eq!(params, before);
        assert!(l.safe.is_finite() && l.kl.unwrap() >= 0.0);
    }

    #[test]
    fn zero_kl_rate_equals_two_loss_update() {
        let spec = ModelKind::Amdn.spec();
        let be = vec![transition(2.0, 0.1), transition(1.5, -0.3)];
        let bc = vec![transition(0.3, 0.8), transition(0.1, 0.9)];
        let hyper = Hyperparams {
            eta_kl: 0.0,
            ..Default::default()
        };
        let mut a = NetworkParams::init(spec, 5).unwrap();
        let mut sa = AdamStates::new(&spec);
        let mut ws = Workspace::new(&spec, 2);
        train_step_amdn(&mut a, &mut sa, &be, &bc, &hyper, &mut ws, 1).unwrap();
        // Manual two-loss update.
        let mut b = NetworkParams::init(spec, 5).unwrap();
        let mut sb = AdamStates::new(&spec);
        batch_gradient(&b, &be, &mut ws, safe_nll_sample).unwrap();
        adam_step(&mut b, &ws.grads.clone(), &mut sb.safe, hyper.eta_s).unwrap();
        batch_gradient(&b, &bc, &mut ws, unsafe_nll_sample).unwrap();
        adam_step(&mut b, &ws.grads.clone(), &mut sb.unsafe_, hyper.eta_c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn safe_nll_gradient_on_mu_vanishes_at_label() {
        // Zero network: mu_s = 0, var_s = 1 everywhere; labels 0.
        let spec = ModelKind::Amdn.spec();
        let params = NetworkParams::zeros(spec).unwrap();
        let batch = vec![transition(2.0, 0.0), transition(1.0, 0.0)];
        let mut ws = Workspace::new(&spec, 2);
        batch_gradient(&params, &batch, &mut ws, |raw, t, out| {
            let l = safe_nll_sample(raw, t, out);
            assert_eq!(out[0], 0.0);
            l
        })
        .unwrap();
        let last = ws.grads.weights.len() - 1;
        let cols = spec.head_outputs;
        assert!(ws.grads.weights[last]
            .iter()
            .step_by(cols)
            .all(|&g| g == 0.0));
        assert_eq!(ws.grads.biases[last][0], 0.0);
    }

    #[test]
    fn kl_update_never_touches_unsafe_output_layer() {
        let spec = ModelKind::Amdn.spec();
        let mut params = NetworkParams::init(spec, 8).unwrap();
        let last = spec.hidden_layers;
        let cols = spec.head_outputs;
        let unsafe_cols = |p: &NetworkParams| -> Vec<f64> {
            p.weights[last]
                .iter()
                .enumerate()
                .filter(|(i, _)| i % cols >= 2)
                .map(|(_, w)| *w)
                .chain(p.biases[last][2..].iter().copied())
                .collect()
        };
        let before = unsafe_cols(&params);
        let mut st = AdamState::new(&spec);
        let mut ws = Workspace::new(&spec, 3);
        let bc = vec![
            transition(0.3, 0.8),
            transition(0.1, 0.9),
            transition(0.05, 1.0),
        ];
        for _ in 0..10 {
            batch_gradient(&params, &bc, &mut ws, neg_kl_sample).unwrap();
            let g = &ws.grads;
            assert!(g.weights[last]
                .iter()
                .enumerate()
                .all(|(i, w)| i % cols < 2 || *w == 0.0));
            assert_eq!(&g.biases[last][2..], &[0.0, 0.0]);
            assert!(g.max_abs() > 0.0);
            adam_step(&mut params, &g.clone(), &mut st, 1e-2).unwrap();
        }
        assert_eq!(unsafe_cols(&params), before);
    }

    #[test]
    fn toy_net_step_matches_hand_adam() {
        // 1-1-1 FFN, zero weights: y = tanh(b_out) = 0. One MSE step on a = 0.5.
        let spec = NetworkSpec::new(3, 1, 1, 1).unwrap();
        let mut params = NetworkParams::zeros(spec).unwrap();
        let mut st = AdamState::new(&spec);
        let hyper = Hyperparams {
            eta_s: 0.01,
            ..Default::default()
        };
        let batch = vec![transition(2.0, 0.5)];
        let mut ws = Workspace::new(&spec, 1);
        let l = train_step_single(
            ModelKind::Ffn,
            &mut params,
            &mut st,
            &batch,
            &hyper,
            &mut ws,
            1,
        )
        .unwrap();
        assert_eq!(l.safe, 0.25);
        // dL/db_out = 2 (0 - 0.5) (1 - 0) = -1; Adam's first step moves by lr * sign.
        let expected = 0.01 * 1.0 / (1.0 + 1e-8);
        assert!((params.biases[1][0] - expected).abs() < 1e-15);
        // Hidden unit is dead (relu(0) = 0), so every other parameter stays 0.
        assert_eq!(params.weights[1][0], 0.0);
        assert_eq!(params.biases[0][0], 0.0);
    }

    #[test]
    fn amdn_requires_collisions() {
        let ds = Dataset::new(
            Provenance::Expert,
            0,
            (0..50)
                .map(|i| transition(2.0, (i % 3) as f64 * 0.1))
                .collect(),
        );
        let err = train(ModelKind::Amdn, &ds, None, &small_hyper()).unwrap_err();
        assert!(matches!(err, TrainError::MissingInput("collisions")));
        assert!(train(ModelKind::Mdn, &ds, None, &small_hyper()).is_ok());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let ds = Dataset::new(
            Provenance::Expert,
            0,
            (0..60)
                .map(|i| transition(1.0 + (i % 10) as f64 * 0.2, (i % 5) as f64 * 0.1 - 0.2))
                .collect(),
        );
        let coll = Dataset::new(
            Provenance::Collision,
            0,
            (0..50)
                .map(|i| transition(0.1 + (i % 25) as f64 * 0.01, 0.5))
                .collect(),
        );
        for kind in ModelKind::ALL {
            let a = train(kind, &ds, Some(&coll), &small_hyper()).unwrap();
            let b = train(kind, &ds, Some(&coll), &small_hyper()).unwrap();
            assert_eq!(a.checkpoint, b.checkpoint);
            assert_eq!(a.final_params, b.final_params);
            assert_eq!(a.log, b.log);
            assert_eq!(a.log.rows.len(), 4);
        }
    }

    #[test]
    fn mean_inference_is_deterministic_and_bounded() {
        let params = NetworkParams::init(ModelKind::Amdn.spec(), 1).unwrap();
        let ck = Checkpoint::from_params("amdn", &params, Default::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = Observation {
            v: 25.0,
            v_rel: -3.0,
            t_h: 1.2,
        };
        let a = infer_pedal(&ck, &obs, InferenceMode::Mean, &mut rng).unwrap();
        let b = infer_pedal(&ck, &obs, InferenceMode::Mean, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(a > -1.0 && a < 1.0);
        let s = infer_pedal(&ck, &obs, InferenceMode::Sampling, &mut rng).unwrap();
        assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn sampling_at_variance_floor_tracks_mean() {
        let spec = ModelKind::Amdn.spec();
        let mut params = NetworkParams::zeros(spec).unwrap();
        let last = spec.hidden_layers;
        params.biases[last] = vec![0.3, -40.0, 0.0, 0.0];
        let policy = Policy::new(ModelKind::Amdn, params).unwrap();
        let mut trace = ForwardTrace::for_spec(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = Observation {
            v: 20.0,
            v_rel: 0.0,
            t_h: 2.0,
        };
        let mean = policy.infer(&obs, InferenceMode::Mean, &mut rng, &mut trace);
        let n = 20_000;
        let close = (0..n)
            .filter(|_| {
                (policy.infer(&obs, InferenceMode::Sampling, &mut rng, &mut trace) - mean).abs()
                    < 0.01
            })
            .count();
        assert!(close as f64 / n as f64 > 0.999);
    }
}
