//! IMU-camera calibration: partial-update MEKF against the full MEKF on
//! the same simulated data.

use pukf::filter::UpdateWeights;
use pukf::harness::{divergence_detect, Variant};
use pukf::scenarios::imu_cam::{imu_cam_truth, run_imu_cam_on, ImuCamParams, ERR_DIM};

fn main() -> pukf::Result<()> {
    let p = ImuCamParams::default();
    let blocks = ["attitude", "position", "velocity", "gyro bias", "accel bias", "lever arm", "cam rotation"];
    for seed in 0..3 {
        let data = imu_cam_truth(&p, seed);
        let runs = [
            (Variant::Ekf, UpdateWeights::full(ERR_DIM)),
            (Variant::MekfPu, UpdateWeights::from_slice(&p.beta_full())?),
        ];
        for (variant, w) in runs {
            let rec = run_imu_cam_on(&p, &data, variant, &w, seed)?;
            let last = rec.len() - 1;
            let e = rec.error(last);
            let worst = (0..7)
                .map(|b| (0..3).map(|i| e[3 * b + i].abs() / rec.sigma[last][3 * b + i]).fold(0.0, f64::max))
                .collect::<Vec<_>>();
            let (div, _) = divergence_detect(&rec);
            println!("seed {seed} {:>7}: diverged {div}", variant.name());
            for (name, r) in blocks.iter().zip(worst) {
                println!("    {name:<13} max |e|/σ {r:.2}");
            }
        }
    }
    Ok(())
}
