//! Dense feedforward network with hand-written reverse-mode gradients and Adam.
//!
//! Layout: every weight matrix is stored row-major with shape `in_dim x out_dim`,
//! so `w[i * out_dim + j]` connects input unit `i` to output unit `j`. Hidden
//! layers use ReLU; the final layer is linear and its outputs are the raw head
//! values. Head squashing (tanh / NNeLU) happens in [`crate::heads`].

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

pub type Result<T> = std::result::Result<T, NnetError>;

/// Shape of a shared-trunk MLP: `hidden_layers` ReLU layers of `hidden_width`
/// units feeding one linear output layer with `head_outputs` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub head_outputs: usize,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        head_outputs: usize,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_layers,
            hidden_width,
            head_outputs,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 3 inputs, 3 hidden layers of 50 units, `heads` outputs.
    pub fn with_heads(heads: usize) -> Self {
        Self {
            input_dim: 3,
            hidden_layers: 3,
            hidden_width: 50,
            head_outputs: heads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_layers", self.hidden_layers),
            ("hidden_width", self.hidden_width),
            ("head_outputs", self.head_outputs),
        ] {
            if v == 0 {
                return Err(NnetError::InvalidSpec(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// `(in_dim, out_dim)` for each dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((prev, self.hidden_width));
            prev = self.hidden_width;
        }
        dims.push((prev, self.head_outputs));
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    /// ELU(alpha = 1) shifted up by one: strictly positive everywhere.
    Nnelu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Nnelu => {
                if x >= 0.0 {
                    x + 1.0
                } else {
                    x.exp()
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Nnelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
        }
    }
}

pub fn activate(kind: Activation, x: f64) -> f64 {
    kind.apply(x)
}

/// Weights and biases, one entry per dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    spec: NetworkSpec,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Gradient buffers shaped exactly like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let dims = spec.layer_dims();
        Self {
            weights: dims.iter().map(|(i, o)| vec![0.0; i * o]).collect(),
            biases: dims.iter().map(|(_, o)| vec![0.0; *o]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter()).flatten()
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

/// Per-layer pre-activations and activations from one forward pass.
///
/// `activations[0]` is the input; `activations[l + 1]` is the output of layer
/// `l`. The last layer is linear, so its activation equals its pre-activation
/// and holds the raw (unsquashed) head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn for_spec(spec: &NetworkSpec) -> Self {
        let dims = spec.layer_dims();
        let mut activations = vec![vec![0.0; spec.input_dim]];
        activations.extend(dims.iter().map(|(_, o)| vec![0.0; *o]));
        Self {
            pre_activations: dims.iter().map(|(_, o)| vec![0.0; *o]).collect(),
            activations,
        }
    }

    pub fn heads(&self) -> &[f64] {
        self.activations.last().expect("trace has an output layer")
    }
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = spec.layer_dims();
        let mut weights = Vec::with_capacity(dims.len());
        for &(fan_in, fan_out) in &dims {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| dist.sample(&mut rng))
                    .collect(),
            );
        }
        let biases = dims.iter().map(|(_, o)| vec![0.0; *o]).collect();
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let g = Gradients::zeros(&spec);
        Ok(Self {
            spec,
            weights: g.weights,
            biases: g.biases,
        })
    }

    /// Builds params from explicit layer buffers, checking every shape.
    pub fn from_parts(
        spec: NetworkSpec,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if weights.len() != dims.len() || biases.len() != dims.len() {
            return Err(NnetError::DimensionMismatch {
                what: "layer count",
                expected: dims.len(),
                got: weights.len().min(biases.len()),
            });
        }
        for (l, &(i, o)) in dims.iter().enumerate() {
            if weights[l].len() != i * o {
                return Err(NnetError::DimensionMismatch {
                    what: "weight matrix",
                    expected: i * o,
                    got: weights[l].len(),
                });
            }
            if biases[l].len() != o {
                return Err(NnetError::DimensionMismatch {
                    what: "bias vector",
                    expected: o,
                    got: biases[l].len(),
                });
            }
        }
        if weights
            .iter()
            .chain(biases.iter())
            .flatten()
            .any(|x| !x.is_finite())
        {
            return Err(NnetError::InvalidSpec("non-finite parameter".into()));
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flatten()
            .all(|x| x.is_finite())
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        let mut trace = ForwardTrace::for_spec(&self.spec);
        self.forward_into(input, &mut trace)?;
        Ok(trace)
    }

    /// Forward pass reusing the buffers of an existing trace.
    pub fn forward_into(&self, input: &[f64], trace: &mut ForwardTrace) -> Result<()> {
        if input.len() != self.spec.input_dim {
            return Err(NnetError::DimensionMismatch {
                what: "input",
                expected: self.spec.input_dim,
                got: input.len(),
            });
        }
        trace.activations[0].copy_from_slice(input);
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let (before, after) = trace.activations.split_at_mut(l + 1);
            let x = &before[l];
            let z = &mut trace.pre_activations[l];
            dense_forward(x, &self.weights[l], &self.biases[l], z);
            let a = &mut after[0];
            if l == last {
                a.copy_from_slice(z);
            } else {
                for (ai, zi) in a.iter_mut().zip(z.iter()) {
                    *ai = zi.max(0.0);
                }
            }
        }
        Ok(())
    }

    /// Convenience: raw head outputs only.
    pub fn heads(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.heads().to_vec())
    }

    /// Gradient of `sum_k head_grads[k] * head_k` with respect to every parameter.
    pub fn backward(&self, trace: &ForwardTrace, head_grads: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros(&self.spec);
        self.accumulate_backward(trace, head_grads, &mut grads)?;
        Ok(grads)
    }

    /// Like [`NetworkParams::backward`] but adds into `grads`.
    pub fn accumulate_backward(
        &self,
        trace: &ForwardTrace,
        head_grads: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if head_grads.len() != self.spec.head_outputs {
            return Err(NnetError::DimensionMismatch {
                what: "head gradients",
                expected: self.spec.head_outputs,
                got: head_grads.len(),
            });
        }
        if trace.pre_activations.len() != self.weights.len() {
            return Err(NnetError::DimensionMismatch {
                what: "trace layers",
                expected: self.weights.len(),
                got: trace.pre_activations.len(),
            });
        }
        let mut delta = head_grads.to_vec();
        let mut next = Vec::with_capacity(self.spec.hidden_width.max(self.spec.input_dim));
        for l in (0..self.weights.len()).rev() {
            let x = &trace.activations[l];
            let out_dim = delta.len();
            for (gb, d) in grads.biases[l].iter_mut().zip(&delta) {
                *gb += d;
            }
            let gw = &mut grads.weights[l];
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut gw[i * out_dim..(i + 1) * out_dim];
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g += xi * d;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.weights[l];
            let prev_pre = &trace.pre_activations[l - 1];
            next.clear();
            for (i, &z) in prev_pre.iter().enumerate() {
                if z > 0.0 {
                    let row = &w[i * out_dim..(i + 1) * out_dim];
                    next.push(row.iter().zip(&delta).map(|(a, b)| a * b).sum());
                } else {
                    next.push(0.0);
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
        Ok(())
    }

    /// Mutable view of every parameter in a fixed order (weights then biases,
    /// layer by layer). Used by finite-difference checks.
    pub fn param_mut(&mut self, index: usize) -> Option<&mut f64> {
        let mut idx = index;
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            if idx < v.len() {
                return v.get_mut(idx);
            }
            idx -= v.len();
        }
        None
    }

    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count()
    }
}

impl Gradients {
    /// Same flat ordering as [`NetworkParams::param_mut`].
    pub fn get(&self, index: usize) -> Option<f64> {
        let mut idx = index;
        for v in self.weights.iter().chain(self.biases.iter()) {
            if idx < v.len() {
                return v.get(idx).copied();
            }
            idx -= v.len();
        }
        None
    }
}

#[inline]
fn dense_forward(x: &[f64], w: &[f64], b: &[f64], z: &mut [f64]) {
    let out_dim = b.len();
    z.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * out_dim..(i + 1) * out_dim];
        for (zj, wj) in z.iter_mut().zip(row) {
            *zj += xi * wj;
        }
    }
}

/// Adam moment accumulators for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self {
            m: Gradients::zeros(spec),
            v: Gradients::zeros(spec),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place. `lr = 0` leaves `params` untouched
/// bit for bit while still advancing the moments.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.weights.len() != params.weights.len() {
        return Err(NnetError::DimensionMismatch {
            what: "gradient layers",
            expected: params.weights.len(),
            got: grads.weights.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let groups = params
        .weights
        .iter_mut()
        .zip(&grads.weights)
        .zip(state.m.weights.iter_mut().zip(state.v.weights.iter_mut()))
        .chain(
            params
                .biases
                .iter_mut()
                .zip(&grads.biases)
                .zip(state.m.biases.iter_mut().zip(state.v.biases.iter_mut())),
        );
    for ((p, g), (m, v)) in groups {
        if p.len() != g.len() {
            return Err(NnetError::DimensionMismatch {
                what: "gradient buffer",
                expected: p.len(),
                got: g.len(),
            });
        }
        for k in 0..p.len() {
            let gk = g[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            if lr != 0.0 {
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = NetworkSpec::with_heads(4);
        let a = NetworkParams::init(spec, 7).unwrap();
        let b = NetworkParams::init(spec, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.biases.iter().flatten().all(|&x| x == 0.0));
        let c = NetworkParams::init(spec, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_and_bounds() {
        let spec = NetworkSpec::new(3, 3, 50, 4).unwrap();
        let p = NetworkParams::init(spec, 0).unwrap();
        let shapes: Vec<usize> = p.weights.iter().map(|w| w.len()).collect();
        assert_eq!(shapes, vec![3 * 50, 50 * 50, 50 * 50, 50 * 4]);
        assert_eq!(
            spec.layer_dims(),
            vec![(3, 50), (50, 50), (50, 50), (50, 4)]
        );
        let b0 = (6.0f64 / 53.0).sqrt();
        assert!(p.weights[0].iter().all(|w| w.abs() <= b0));
    }

    #[test]
    fn zero_counts_are_rejected() {
        assert!(NetworkSpec::new(0, 3, 50, 4).is_err());
        assert!(NetworkSpec::new(3, 0, 50, 4).is_err());
        assert!(NetworkSpec::new(3, 3, 50, 0).is_err());
    }

    #[test]
    fn activation_closed_forms() {
        assert_eq!(activate(Activation::Relu, -2.5), 0.0);
        assert_eq!(activate(Activation::Relu, 1.5), 1.5);
        assert_eq!(activate(Activation::Tanh, 0.0), 0.0);
        assert_eq!(activate(Activation::Nnelu, 0.0), 1.0);
        let v = activate(Activation::Nnelu, -20.0);
        assert!(v > 0.0);
        assert!((v - 2.061_153_622_438_558e-9).abs() < 1e-20);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = NetworkParams::zeros(NetworkSpec::with_heads(4)).unwrap();
        assert_eq!(p.heads(&[0.3, -0.2, 0.9]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let p = NetworkParams::zeros(NetworkSpec::with_heads(4)).unwrap();
        assert!(matches!(
            p.forward(&[1.0, 2.0]),
            Err(NnetError::DimensionMismatch {
                expected: 3,
                got: 2,
                ..
            })
        ));
    }

    #[test]
    fn forward_matches_hand_arithmetic_on_2x2() {
        // One hidden layer of width 2, two outputs.
        let spec = NetworkSpec::new(2, 1, 2, 2).unwrap();
        let weights = vec![vec![1.0, -1.0, 0.5, 2.0], vec![1.0, 0.0, 0.0, 1.0]];
        let biases = vec![vec![0.1, 0.0], vec![0.0, -0.5]];
        let p = NetworkParams::from_parts(spec, weights, biases).unwrap();
        // z1 = [1*1 + 2*0.5 + 0.1, 1*-1 + 2*2 + 0] = [2.1, 3.0]; relu keeps both.
        // out = [2.1, 3.0 - 0.5].
        let t = p.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(t.pre_activations[0], vec![2.1, 3.0]);
        assert_eq!(t.heads(), &[2.1, 2.5]);
        // Negative pre-activation is cut by relu.
        let t = p.forward(&[-1.0, 0.0]).unwrap();
        assert_eq!(t.activations[1], vec![0.0, 1.0]);
        assert_eq!(t.heads(), &[0.0, 0.5]);
    }

    #[test]
    fn zero_head_grads_give_zero_gradients() {
        let p = NetworkParams::init(NetworkSpec::with_heads(4), 3).unwrap();
        let t = p.forward(&[0.5, 0.1, 0.2]).unwrap();
        let g = p.backward(&t, &[0.0; 4]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(p.backward(&t, &[0.0; 3]).is_err());
    }

    #[test]
    fn backward_is_linear_in_head_grads() {
        let p = NetworkParams::init(NetworkSpec::new(3, 2, 5, 2).unwrap(), 11).unwrap();
        let t = p.forward(&[0.3, -0.4, 0.8]).unwrap();
        let g1 = p.backward(&t, &[0.7, -1.3]).unwrap();
        let mut g2 = p.backward(&t, &[1.4, -2.6]).unwrap();
        g2.scale(0.5);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    fn weighted_heads(p: &NetworkParams, x: &[f64], hg: &[f64]) -> f64 {
        p.heads(x).unwrap().iter().zip(hg).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn small_net_matches_central_differences() {
        let spec = NetworkSpec::new(3, 1, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = NetworkParams::init(spec, 9).unwrap();
        for b in p.biases.iter_mut().flatten() {
            *b = rng.gen_range(-0.5..0.5);
        }
        let x = [0.4, -0.7, 0.2];
        let hg = [0.9, -0.3];
        let analytic = p.backward(&p.forward(&x).unwrap(), &hg).unwrap();
        let h = 1e-5;
        for k in 0..p.parameter_count() {
            let orig = *p.param_mut(k).unwrap();
            *p.param_mut(k).unwrap() = orig + h;
            let up = weighted_heads(&p, &x, &hg);
            *p.param_mut(k).unwrap() = orig - h;
            let down = weighted_heads(&p, &x, &hg);
            *p.param_mut(k).unwrap() = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic.get(k).unwrap();
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-7);
            assert!(
                rel < 1e-4 || (a - fd).abs() < 1e-7,
                "param {k}: {a} vs {fd}"
            );
        }
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let spec = NetworkSpec::new(3, 1, 4, 2).unwrap();
        let mut p = NetworkParams::init(spec, 1).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&spec);
        adam_step(&mut p, &Gradients::zeros(&spec), &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
        adam_step(&mut p, &Gradients::zeros(&spec), &mut st, 0.1).unwrap();
        assert_eq!(st.step, 2);
    }

    #[test]
    fn adam_first_step_hand_value() {
        let spec = NetworkSpec::new(1, 1, 1, 1).unwrap();
        let mut p = NetworkParams::zeros(spec).unwrap();
        let mut g = Gradients::zeros(&spec);
        g.weights[0][0] = 0.5;
        let mut st = AdamState::new(&spec);
        adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        // m_hat = 0.5, v_hat = 0.25, delta = -0.1 * 0.5 / (0.5 + 1e-8)
        let expected = -0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p.weights[0][0] - expected).abs() < 1e-15);
        assert!((p.weights[0][0] + 0.099_999_998).abs() < 1e-9);
        assert_eq!(p.weights[1][0], 0.0);
    }

    #[test]
    fn adam_zero_lr_is_bit_identical() {
        let spec = NetworkSpec::new(3, 2, 5, 4).unwrap();
        let mut p = NetworkParams::init(spec, 2).unwrap();
        let before = p.clone();
        let t = p.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = p.backward(&t, &[1.0, -1.0, 0.5, 2.0]).unwrap();
        let mut st = AdamState::new(&spec);
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut st, 0.0).unwrap();
        }
        assert_eq!(p, before);
    }
}
