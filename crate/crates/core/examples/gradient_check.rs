//! Compare backpropagated gradients of the three AMDN losses against central
//! finite differences on random small networks.

use amdn::datasets::Transition;
use amdn::nnet::{NetworkParams, NetworkSpec};
use amdn::trainer::{neg_kl_sample, safe_nll_sample, unsafe_nll_sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type SampleLoss = fn(&[f64], &Transition, &mut [f64]) -> f64;

/// Loss value as minimised (the KL sample function reports +KL but writes the
/// gradient of -KL). `frozen` pins the unsafe outputs for the detached KL.
fn value(
    f: SampleLoss,
    sign: f64,
    params: &NetworkParams,
    t: &Transition,
    frozen: Option<&[f64]>,
) -> f64 {
    let mut raw = params.heads(&t.features()).unwrap();
    if let Some(q) = frozen {
        raw[2..4].copy_from_slice(&q[2..4]);
    }
    let mut g = vec![0.0; raw.len()];
    sign * f(&raw, t, &mut g)
}

fn max_relative_error(
    f: SampleLoss,
    sign: f64,
    detach: bool,
    params: &mut NetworkParams,
    t: &Transition,
) -> f64 {
    let trace = params.forward(&t.features()).unwrap();
    let mut head_grads = vec![0.0; trace.heads().len()];
    f(trace.heads(), t, &mut head_grads);
    let frozen = detach.then(|| trace.heads().to_vec());
    let grads = params.backward(&trace, &head_grads).unwrap();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..params.parameter_count() {
        let orig = *params.param_mut(i).unwrap();
        *params.param_mut(i).unwrap() = orig + eps;
        let up = value(f, sign, params, t, frozen.as_deref());
        *params.param_mut(i).unwrap() = orig - eps;
        let down = value(f, sign, params, t, frozen.as_deref());
        *params.param_mut(i).unwrap() = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.get(i).unwrap();
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}

/// A random network and input whose hidden pre-activations all sit at least
/// `1e-3` away from the ReLU kink, so central differences are meaningful.
fn random_net(rng: &mut ChaCha8Rng) -> (NetworkParams, Transition) {
    loop {
        let spec = NetworkSpec::new(3, rng.gen_range(1..=3), rng.gen_range(1..=5), 4).unwrap();
        let mut params = NetworkParams::zeros(spec).unwrap();
        for i in 0..params.parameter_count() {
            *params.param_mut(i).unwrap() = rng.gen_range(-1.0..1.0);
        }
        let t = Transition {
            episode: 0,
            step: 0,
            v: rng.gen_range(10.0..35.0),
            v_rel: rng.gen_range(-6.0..6.0),
            t_h: rng.gen_range(0.5..4.0),
            action: rng.gen_range(-1.0..1.0),
        };
        let trace = params.forward(&t.features()).unwrap();
        let hidden = &trace.pre_activations[..spec.hidden_layers];
        if hidden.iter().flatten().all(|z| z.abs() > 1e-3) {
            return (params, t);
        }
    }
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let losses: [(&str, SampleLoss, f64, bool); 3] = [
        ("NLL_s", safe_nll_sample, 1.0, false),
        ("NLL_c", unsafe_nll_sample, 1.0, false),
        ("-D_KL", neg_kl_sample, -1.0, true),
    ];
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let (mut params, t) = random_net(&mut rng);
        for (k, (_, f, sign, detach)) in losses.iter().enumerate() {
            worst[k] = worst[k].max(max_relative_error(*f, *sign, *detach, &mut params, &t));
        }
    }
    for ((name, _, _, _), w) in losses.iter().zip(worst) {
        println!("{name:<6} worst relative error over 100 networks: {w:.2e}");
    }
}
