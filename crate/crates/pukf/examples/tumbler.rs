//! Tumbling body: coarse SVD rate initialization, then the UD-PU filter
//! with periodic feature re-selection.

use pukf::harness::{Variant, WeightSpec};
use pukf::scenarios::tumbler::{coarse_rate_init, run_tumbler, tumbler_truth, TumblerParams};

fn main() -> pukf::Result<()> {
    let p = TumblerParams { reinit_every: 100, ..TumblerParams::default() };
    let data = tumbler_truth(&p, 3);
    let frames = (p.init_window * p.frame_rate).round() as usize + 1;
    let (mean, sigma) = coarse_rate_init(&data.meas[..frames], p.dt())?;
    println!("true rate   {:?}", data.omega.as_slice());
    println!("coarse rate {:?} ± {:?}", mean.as_slice(), sigma.as_slice());

    let rec = run_tumbler(&p, Variant::UdPu, &WeightSpec::Default, 3)?;
    for t in [0.0, 5.0, 10.0, 20.0, 30.0] {
        let Some(i) = rec.times.iter().position(|s| *s >= p.init_window + t) else { break };
        let e = rec.error(i);
        let s = &rec.sigma[i];
        println!("t = {:>5.1} s  ω err [{:+.2e} {:+.2e} {:+.2e}]  σ [{:.2e} {:.2e} {:.2e}]", rec.times[i], e[0], e[1], e[2], s[0], s[1], s[2]);
    }
    Ok(())
}
