//! Gaussian action heads: squashing of raw network outputs, negative
//! log-likelihood and closed-form KL divergence, each with analytic gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::nnet::Activation;

/// Lower bound applied to every variance produced by a head.
pub const VAR_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadsError {
    #[error("expected {expected} raw head outputs, got {got}")]
    Arity { expected: usize, got: usize },
}

/// A univariate Gaussian over pedal actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussParams {
    pub mu: f64,
    pub var: f64,
}

impl GaussParams {
    pub fn new(mu: f64, var: f64) -> Self {
        Self { mu, var }
    }

    /// Squash one `(mu_raw, var_raw)` pair: tanh mean, NNeLU variance with floor.
    pub fn from_raw(mu_raw: f64, var_raw: f64) -> Self {
        Self {
            mu: Activation::Tanh.apply(mu_raw),
            var: Activation::Nnelu.apply(var_raw).max(VAR_FLOOR),
        }
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn entropy(&self) -> f64 {
        0.5 * (LN_2PI + 1.0 + self.var.ln())
    }
}

/// Chain rule from `(d_mu, d_var)` back to the raw pre-squash outputs.
/// The floor is a hard clamp, so no gradient flows while it is engaged.
pub fn raw_grads(mu_raw: f64, var_raw: f64, d_mu: f64, d_var: f64) -> (f64, f64) {
    let d_mu_raw = d_mu * Activation::Tanh.derivative(mu_raw);
    let d_var_raw = if Activation::Nnelu.apply(var_raw) > VAR_FLOOR {
        d_var * Activation::Nnelu.derivative(var_raw)
    } else {
        0.0
    };
    (d_mu_raw, d_var_raw)
}

/// Safe (`N^s`) and unsafe (`N^c`) action distributions for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmdnOutput {
    pub safe: GaussParams,
    pub unsafe_: GaussParams,
}

/// Raw order: `(mu_safe, var_safe, mu_unsafe, var_unsafe)`.
pub fn squash_heads(raw: &[f64]) -> Result<AmdnOutput, HeadsError> {
    if raw.len() != 4 {
        return Err(HeadsError::Arity {
            expected: 4,
            got: raw.len(),
        });
    }
    Ok(AmdnOutput {
        safe: GaussParams::from_raw(raw[0], raw[1]),
        unsafe_: GaussParams::from_raw(raw[2], raw[3]),
    })
}

pub fn nll(g: GaussParams, a_hat: f64) -> f64 {
    let d = a_hat - g.mu;
    0.5 * (LN_2PI + g.var.ln()) + d * d / (2.0 * g.var)
}

/// `(d nll / d mu, d nll / d var)`.
pub fn nll_grads(g: GaussParams, a_hat: f64) -> (f64, f64) {
    let d = a_hat - g.mu;
    let d_mu = (g.mu - a_hat) / g.var;
    let d_var = 1.0 / (2.0 * g.var) - d * d / (2.0 * g.var * g.var);
    (d_mu, d_var)
}

/// `D_KL(p || q)` for univariate Gaussians.
pub fn kl_gauss(p: GaussParams, q: GaussParams) -> f64 {
    let dm = p.mu - q.mu;
    0.5 * (q.var / p.var).ln() + (p.var + dm * dm) / (2.0 * q.var) - 0.5
}

/// Gradient of `D_KL(p || q)` with respect to `p` only; `q` is a constant.
pub fn kl_grads_p(p: GaussParams, q: GaussParams) -> (f64, f64) {
    let d_mu = (p.mu - q.mu) / q.var;
    let d_var = 1.0 / (2.0 * q.var) - 1.0 / (2.0 * p.var);
    (d_mu, d_var)
}

/// Draw from `N(mu, var)` and clip to the pedal range.
pub fn sample<R: Rng + ?Sized>(g: GaussParams, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (g.mu + g.std() * z).clamp(-1.0, 1.0)
}
