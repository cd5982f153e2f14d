//! Train fresh lead-vehicle adversaries against two followers and write the
//! per-episode minimum-headway series.

use amdn::drivers::ExpertFollower;
use amdn::eval::{emit_report, run_adversarial, AdvEvalConfig, VariantReport};
use amdn::sim::{Observation, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(50);
    let cfg = AdvEvalConfig {
        max_episodes: episodes,
        ..AdvEvalConfig::default()
    };
    let sim = SimConfig::default();
    // Reacts to the gap only, ignoring the closing speed.
    let sluggish = |o: &Observation| (0.3 * (o.t_h - 2.0)).clamp(-1.0, 1.0);
    let mut reports = Vec::new();
    for (name, report) in [
        (
            "expert",
            run_adversarial(&ExpertFollower::noiseless(), &cfg, &sim, 0)?,
        ),
        ("sluggish", run_adversarial(&sluggish, &cfg, &sim, 0)?),
    ] {
        println!(
            "{name}: {} collisions, first after {:?} episodes, final-10 mean min headway {:.2} s",
            report.collisions_total,
            report.episodes_until_first_collision,
            report.tail_mean_min_headway(10)
        );
        reports.push(VariantReport {
            variant: name.into(),
            naturalistic: None,
            adversarial: Some(report),
        });
    }
    emit_report(&reports, "adversarial_report".as_ref(), "example", 0)?;
    Ok(())
}
