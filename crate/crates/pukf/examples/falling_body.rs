//! Single falling-body run: EKF against the partial-update filter.
//!
//! Prints the final error and 3σ bound of each state.

use pukf::harness::{run_scenario, Scenario, Variant, WeightSpec};
use pukf::scenarios::falling_body::FallingBodyParams;

fn main() -> pukf::Result<()> {
    let sc = Scenario::FallingBody(FallingBodyParams::default());
    let seed = 7;
    for variant in [Variant::Ekf, Variant::Pu, Variant::UdPu] {
        let rec = run_scenario(&sc, variant, &WeightSpec::Default, seed)?;
        let last = rec.len() - 1;
        let e = rec.error(last);
        println!("{:>6}  t = {:.1} s", variant.name(), rec.times[last]);
        for (i, name) in ["altitude", "velocity", "ballistic"].iter().enumerate() {
            println!("        {name:<10} err {:>12.4e}  3σ {:>12.4e}", e[i], 3.0 * rec.sigma[last][i]);
        }
    }
    Ok(())
}
