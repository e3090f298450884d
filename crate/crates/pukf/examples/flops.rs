//! Operation counts for a range of state sizes.

use pukf::flops::{batch_update, sequential_update, sqrt_pu_filter, ud_pu_filter};

fn main() {
    let (m, q) = (3.0, 3.0);
    println!("{:>4} {:>10} {:>12} {:>10} {:>10}", "n", "batch", "sequential", "sqrt-pu", "ud-pu");
    for n in [3, 6, 9, 12, 15, 21] {
        let n = n as f64;
        println!(
            "{n:>4} {:>10.0} {:>12.0} {:>10.0} {:>10.0}",
            batch_update(n, m),
            sequential_update(n, m),
            sqrt_pu_filter(n, q).total(),
            ud_pu_filter(n, q).total()
        );
    }
}
