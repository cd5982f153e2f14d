//! Generate the expert demonstration dataset, save it with its metadata
//! sidecar, read it back and split it.

use amdn::datasets::{generate_expert, read_csv, split_80_20, write_csv, ExpertDataConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "expert.csv".into());
    let ds = generate_expert(&ExpertDataConfig::default(), 0);
    write_csv(&ds, path.as_ref())?;
    let back = read_csv(path.as_ref())?;
    assert_eq!(back, ds);
    let split = split_80_20(&back, 0)?;
    println!(
        "{} transitions written to {path}: mean t_h {:.3} s, mean pedal {:.4}, split {}/{}",
        ds.len(),
        ds.mean_t_h(),
        ds.mean_action(),
        split.train.len(),
        split.validation.len()
    );
    Ok(())
}
