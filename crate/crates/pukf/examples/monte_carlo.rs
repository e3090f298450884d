//! Monte Carlo campaign with the UD partial-update filter, written as CSV.
//!
//! Usage: cargo run --example monte_carlo -- [runs] [out.csv]

use std::fs::File;

use pukf::harness::{consistency_stats, monte_carlo, Scenario, Variant, WeightSpec};
use pukf::scenarios::falling_body::FallingBodyParams;

fn main() -> pukf::Result<()> {
    let mut args = std::env::args().skip(1);
    let runs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let out = args.next().unwrap_or_else(|| "monte_carlo.csv".into());

    let sc = Scenario::FallingBody(FallingBodyParams::default());
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = monte_carlo(&sc, Variant::UdPu, &WeightSpec::Default, runs, 0, jobs)?;
    report.write_csv(File::create(&out).map_err(|e| pukf::Error::Config(e.to_string()))?)?;

    println!("{} runs, {} diverged, written to {out}", report.run_count, report.divergence_count);
    for (i, s) in consistency_stats(&report).iter().enumerate() {
        println!("state {i}: sampled/filter σ {:.3}, mean error z {:+.2}", s.ratio, s.z);
    }
    Ok(())
}
