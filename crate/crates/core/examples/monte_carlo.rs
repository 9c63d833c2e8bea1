//! Runs a small Monte Carlo sweep and prints the series as CSV.

use dfrc::harness::{run_experiment, ExperimentConfig, ExperimentId};

fn main() -> dfrc::Result<()> {
    let id: ExperimentId = std::env::args().nth(1).as_deref().unwrap_or("fig10").parse()?;
    let mut cfg = ExperimentConfig::for_experiment(id);
    cfg.trials = 10;
    let out = run_experiment(&cfg)?;
    for s in &out.series {
        print!("{}", s.to_csv(&[format!("experiment={id} trials={}", cfg.trials)]));
    }
    for (k, v) in &out.summary {
        println!("{k} = {v:.4}");
    }
    Ok(())
}
