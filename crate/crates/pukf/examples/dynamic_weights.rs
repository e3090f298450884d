//! Static weights against the DNL and DC rules, 3σ initial errors.

use nalgebra::DVector;
use pukf::harness::{divergence_detect, monte_carlo, Scenario, Variant, WeightSpec};
use pukf::scenarios::falling_body::FallingBodyParams;

fn main() -> pukf::Result<()> {
    let p = FallingBodyParams { init_offset: 3.0, ..FallingBodyParams::default() };
    let sc = Scenario::FallingBody(p);
    let base = vec![0.9, 0.9, 0.75];
    let specs = [
        ("static", WeightSpec::Static(base.clone())),
        ("dnl", WeightSpec::Dnl { base: Some(base.clone()) }),
        ("dc", WeightSpec::Dc { base: Some(base) }),
    ];
    for (name, spec) in specs {
        let report = monte_carlo(&sc, Variant::Pu, &spec, 50, 0, 4)?;
        let mut mean = DVector::zeros(3);
        let mut beta_min = f64::INFINITY;
        for r in &report.runs {
            mean += r.error(r.len() - 1).abs();
            beta_min = r.beta.iter().filter_map(|b| (!b[2].is_nan()).then_some(b[2])).fold(beta_min, f64::min);
        }
        mean /= report.runs.len() as f64;
        let div = report.runs.iter().filter(|r| divergence_detect(r).0).count();
        println!(
            "{name:>6}: mean |final err| [{:.3e}, {:.3e}, {:.3e}], min β_ballistic {beta_min:.3}, diverged {div}",
            mean[0], mean[1], mean[2]
        );
    }
    Ok(())
}
