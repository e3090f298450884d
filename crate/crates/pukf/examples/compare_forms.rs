//! Full, square-root and UD partial updates on the same data.

use pukf::harness::compare_forms;
use pukf::scenarios::falling_body::FallingBodyParams;

fn main() -> pukf::Result<()> {
    let p = FallingBodyParams::default();
    for beta in [[0.9, 0.9, 0.75], [1.0, 1.0, 1.0], [1.0, 1.0, 0.0]] {
        let c = compare_forms(&p, &beta, 1)?;
        println!(
            "β = {beta:?}: {} state dev {:.2e}, cov dev {:.2e}",
            c.variants.join("/"),
            c.max_state_dev,
            c.max_cov_dev
        );
    }
    Ok(())
}
