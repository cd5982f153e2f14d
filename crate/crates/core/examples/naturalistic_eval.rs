//! Drive the scripted expert and a constant-gas policy through the
//! naturalistic scenario suite and export one episode trace.

use amdn::drivers::ExpertFollower;
use amdn::eval::{run_naturalistic, ScenarioSet};
use amdn::sim::{Observation, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenarios = ScenarioSet::generate(120, 0);
    let sim = SimConfig::default();
    let (expert, logs) = run_naturalistic(&ExpertFollower::noiseless(), &scenarios, &sim, 0, true);
    println!("expert: {expert:#?}");
    logs[2].save("expert_episode_2.csv".as_ref())?;
    let gas = |_: &Observation| 1.0;
    let (full_gas, _) = run_naturalistic(&gas, &scenarios, &sim, 0, false);
    println!(
        "constant gas: {} collisions in {} episodes",
        full_gas.collisions, full_gas.episodes
    );
    Ok(())
}
