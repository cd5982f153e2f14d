//! Desk-scale reproduction for one seed: expert data, imitation follower,
//! collision data, all four variants, both test frameworks and the report.
//!
//! ```text
//! cargo run --release --example full_pipeline -- [seed] [training_steps] [out_dir]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use amdn::config::RunConfig;
use amdn::datasets::write_csv;
use amdn::eval::emit_report;
use amdn::pipeline;
use amdn::trainer::{ModelKind, ModelVariant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let steps: u64 = args
        .next()
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(100_000);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "pipeline_out".into()));
    std::fs::create_dir_all(&out)?;

    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.training.training_steps = steps;
    cfg.validate()?;
    let clock = Instant::now();

    let expert = pipeline::expert_dataset(&cfg);
    write_csv(&expert, &out.join("expert.csv"))?;
    println!(
        "expert: {} transitions, mean t_h {:.3}",
        expert.len(),
        expert.mean_t_h()
    );

    let ffn = pipeline::train_model(&cfg, ModelKind::Ffn, &expert, None)?;
    println!(
        "ffn trained ({:.0?}), best validation {:.3e}",
        clock.elapsed(),
        ffn.best_validation.safe
    );
    let (follower, probes) = pipeline::select_follower(&cfg, &ffn.snapshots)?;
    println!(
        "collection follower: step {} (probes {probes:?})",
        follower.metadata.steps
    );
    let (collisions, stats) = pipeline::collision_dataset(&cfg, follower)?;
    write_csv(&collisions, &out.join("collisions.csv"))?;
    println!(
        "collisions: {} windows from {} adversary episodes ({:.0?})",
        stats.collisions,
        stats.episodes,
        clock.elapsed()
    );

    let mut trained = pipeline::train_all(
        &cfg,
        &[ModelKind::Mdn, ModelKind::AmdnNoKl, ModelKind::Amdn],
        &expert,
        Some(&collisions),
    )?;
    trained.outcomes.insert(0, (ModelKind::Ffn, ffn));
    for (kind, o) in &trained.outcomes {
        o.checkpoint.save(&out.join(format!("{kind}.json")))?;
        println!("{kind}: best validation {:?}", o.best_validation);
    }
    println!("training done ({:.0?})", clock.elapsed());

    let reports = pipeline::evaluate_all(&cfg, &trained, &ModelVariant::report_set(), true, true)?;
    for r in &reports {
        let nat = r.naturalistic.as_ref().expect("naturalistic run");
        let adv = r.adversarial.as_ref().expect("adversarial run");
        println!(
            "{:<14} nat collisions {:>3}  min t_h {:.2}  mean t_h {:.2} | adv collisions {:>4}  tail min t_h {:.2}",
            r.variant,
            nat.collisions,
            nat.min_t_h,
            nat.mean_t_h,
            adv.collisions_total,
            adv.tail_mean_min_headway(50)
        );
    }
    emit_report(&reports, &out.join("report"), &cfg.hash(), seed)?;
    println!(
        "report written to {} ({:.0?})",
        out.join("report").display(),
        clock.elapsed()
    );
    Ok(())
}
