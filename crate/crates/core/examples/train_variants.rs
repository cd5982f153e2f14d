//! Train all four variants on a small synthetic problem and inspect the
//! learned safe and unsafe distributions at one state.

use amdn::datasets::{Dataset, Provenance, Transition};
use amdn::heads::{kl_gauss, squash_heads};
use amdn::trainer::{train, Hyperparams, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic(
    provenance: Provenance,
    n: usize,
    seed: u64,
    action: impl Fn(f64, f64) -> f64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions = (0..n)
        .map(|i| {
            let t_h = rng.gen_range(0.5..3.0);
            let v_rel = rng.gen_range(-5.0..5.0);
            Transition {
                episode: (i / 25) as u64,
                step: (i % 25) as u64,
                v: rng.gen_range(12.0..30.0),
                v_rel,
                t_h,
                action: action(t_h, v_rel).clamp(-1.0, 1.0),
            }
        })
        .collect();
    Dataset::new(provenance, seed, transitions)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let expert = synthetic(Provenance::Synthetic, 4000, 1, |t_h, v_rel| {
        0.5 * (t_h - 2.0) + 0.15 * v_rel
    });
    let collisions = synthetic(Provenance::Collision, 2000, 2, |_, _| 0.8);
    let hyper = Hyperparams {
        training_steps: 3000,
        eta_kl: 1e-4,
        ..Hyperparams::default()
    };
    let probe = Transition {
        episode: 0,
        step: 0,
        v: 20.0,
        v_rel: -2.0,
        t_h: 1.0,
        action: 0.0,
    };
    for kind in ModelKind::ALL {
        let out = train(kind, &expert, Some(&collisions), &hyper)?;
        let params = out.checkpoint.to_params()?;
        let raw = params.heads(&probe.features())?;
        print!("{kind:<10} best validation {:.4}", out.best_validation.safe);
        if kind.needs_collisions() {
            let h = squash_heads(&raw)?;
            print!(
                "  safe N({:.3}, {:.4})  unsafe N({:.3}, {:.4})  KL {:.3}",
                h.safe.mu,
                h.safe.var,
                h.unsafe_.mu,
                h.unsafe_.var,
                kl_gauss(h.safe, h.unsafe_)
            );
        }
        println!();
    }
    Ok(())
}
