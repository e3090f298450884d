mod common;

use nalgebra::DVector;
use pukf::harness::*;
use pukf::scenarios::falling_body::FallingBodyParams;
use pukf::scenarios::tumbler::{coarse_rate_init, tumbler_truth, TumblerParams};
use pukf::scenarios::Config;
use pukf::Error;

fn fb() -> Scenario {
    Scenario::FallingBody(FallingBodyParams::default())
}

fn csv_bytes(rec: &RunRecord) -> Vec<u8> {
    let mut buf = Vec::new();
    rec.write_csv(&mut buf).unwrap();
    buf
}

#[test]
fn same_seed_same_bytes() {
    for variant in [Variant::Pu, Variant::SrPu, Variant::UdPu, Variant::Ekf] {
        let a = run_scenario(&fb(), variant, &WeightSpec::Default, 42).unwrap();
        let b = run_scenario(&fb(), variant, &WeightSpec::Default, 42).unwrap();
        // β is NaN before the first update, so compare serialized bytes
        assert_eq!(csv_bytes(&a), csv_bytes(&b));
        assert_eq!(a.failure, b.failure);
    }
    let a = run_scenario(&fb(), Variant::Pu, &WeightSpec::Default, 1).unwrap();
    let b = run_scenario(&fb(), Variant::Pu, &WeightSpec::Default, 2).unwrap();
    // the truth is deterministic; the seed moves the initial estimate and the noise
    assert_eq!(a.truth, b.truth);
    assert_ne!(a.est, b.est);
}

#[test]
fn report_independent_of_jobs() {
    let one = monte_carlo(&fb(), Variant::UdPu, &WeightSpec::Default, 24, 7, 1).unwrap();
    let many = monte_carlo(&fb(), Variant::UdPu, &WeightSpec::Default, 24, 7, 8).unwrap();
    assert_eq!(one.count, many.count);
    assert_eq!(one.divergence_count, many.divergence_count);
    for (a, b) in one.runs.iter().zip(&many.runs) {
        assert_eq!(csv_bytes(a), csv_bytes(b));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    one.write_csv(&mut a).unwrap();
    many.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_runs_rejected() {
    let r = monte_carlo(&fb(), Variant::Pu, &WeightSpec::Default, 0, 0, 1);
    assert_eq!(r.unwrap_err(), Error::InvalidRunCount);
}

#[test]
fn accumulator_merge_is_associative() {
    let runs: Vec<RunRecord> =
        (0..9).map(|s| run_scenario(&fb(), Variant::Pu, &WeightSpec::Default, s).unwrap()).collect();
    let (len, n) = (runs[0].len(), runs[0].state_dim());
    let part = |r: &[RunRecord]| {
        let mut acc = Accumulator::new(len, n);
        r.iter().for_each(|x| acc.add(x));
        acc
    };
    let (a, b, c) = (part(&runs[..2]), part(&runs[2..5]), part(&runs[5..]));
    let left = a.merge(&b).merge(&c);
    let right = a.merge(&b.merge(&c));
    let whole = part(&runs);
    for acc in [&left, &right] {
        assert_eq!(acc.runs, 9);
        assert_eq!(acc.count, whole.count);
        for i in 0..len {
            let scale = 1.0 + whole.mean_err[i].amax();
            assert!((&acc.mean_err[i] - &whole.mean_err[i]).amax() <= 1e-12 * scale);
            let scale = 1.0 + whole.m2[i].amax();
            assert!((&acc.m2[i] - &whole.m2[i]).amax() <= 1e-12 * scale);
        }
    }
}

#[test]
fn csv_layout() {
    let rec = run_scenario(&fb(), Variant::Pu, &WeightSpec::Default, 3).unwrap();
    let text = String::from_utf8(csv_bytes(&rec)).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("time,truth_0,truth_1,truth_2,est_0"));
    assert!(header.ends_with("beta_2,cond_full,cond_factor,gate"));
    assert_eq!(lines.count(), rec.len());
    assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
    assert_eq!(fmt17(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    assert_eq!(fmt17(f64::NAN), "NaN");
}

fn synthetic(errors: &[f64], sigma: f64) -> RunRecord {
    let mut rec = RunRecord::new("test", 0, DVector::from_element(1, 1.0));
    for (i, e) in errors.iter().enumerate() {
        let z = DVector::zeros(1);
        rec.push(i as f64, DVector::from_element(1, *e), z.clone(), DVector::from_element(1, sigma), z, 1.0, 1.0, None);
    }
    rec
}

#[test]
fn divergence_rule() {
    let mut e = vec![0.0; 30];
    assert_eq!(divergence_detect(&synthetic(&e, 1.0)), (false, None));
    // nine epochs past the bound is not yet divergence
    e[5..14].iter_mut().for_each(|v| *v = 31.0);
    assert_eq!(divergence_detect(&synthetic(&e, 1.0)), (false, None));
    e[14] = -31.0;
    assert_eq!(divergence_detect(&synthetic(&e, 1.0)), (true, Some(5.0)));
    let mut e = vec![0.0; 30];
    e[20] = f64::NAN;
    assert_eq!(divergence_detect(&synthetic(&e, 1.0)), (true, Some(20.0)));
    let mut rec = synthetic(&[0.0; 5], 1.0);
    rec.failure = Some("stopped".into());
    assert!(divergence_detect(&rec).0);
}

#[test]
fn three_sigma_check() {
    let rec = synthetic(&[5.0, 0.0, 2.9], 1.0);
    assert!(rec.outside_3sigma_after(-1.0));
    assert!(!rec.outside_3sigma_after(0.5));
}

fn report_from(errs: &[Vec<f64>], sigma: f64) -> MonteCarloReport {
    aggregate(errs.iter().map(|e| synthetic(e, sigma)).collect(), 0)
}

#[test]
fn consistency_of_synthetic_runs() {
    // runs alternate ±1, so the sampled σ is √(n/(n−1)) and the mean is zero
    let n = 100;
    let errs: Vec<Vec<f64>> = (0..n).map(|r| vec![if r % 2 == 0 { 1.0 } else { -1.0 }; 30]).collect();
    let s = (n as f64 / (n as f64 - 1.0)).sqrt();
    let st = consistency_stats(&report_from(&errs, s))[0];
    assert!((st.ratio - 1.0).abs() < 1e-12);
    assert!(st.z.abs() < 1e-12);
    let st = consistency_stats(&report_from(&errs, 2.0 * s))[0];
    assert!((st.ratio - 0.5).abs() < 1e-12);

    // constant offset of 0.1 on top: z = 0.1 / (σ/√n)
    let shifted: Vec<Vec<f64>> = errs.iter().map(|e| e.iter().map(|v| v + 0.1).collect()).collect();
    let st = consistency_stats(&report_from(&shifted, s))[0];
    assert!((st.z - 0.1 * (n as f64).sqrt() / s).abs() < 1e-9);
}

#[test]
fn config_round_trip() {
    for name in ["falling-body", "imu-cam", "tumbler"] {
        let sc = Scenario::from_name(name, &Config::default()).unwrap();
        let text = sc.to_config_text();
        let again = Scenario::from_name(name, &Config::parse(&text).unwrap()).unwrap();
        assert_eq!(sc, again, "{name}");
    }
}

#[test]
fn config_errors() {
    assert!(matches!(Scenario::from_name("orbit", &Config::default()), Err(Error::Config(_))));
    let bad = [
        "falling_body.dt = fast",
        "falling_body.unknown_key = 1",
        "falling_body.beta = 0.5, 1.5, 1",
        "falling_body.r = -1",
        "no equals sign here",
    ];
    for text in bad {
        let r = Config::parse(text).and_then(|c| Scenario::from_name("falling-body", &c));
        assert!(matches!(r, Err(Error::Config(_))), "{text}: {r:?}");
    }
    assert!(matches!(Variant::parse("kalman"), Err(Error::Config(_))));
    assert!(matches!(WeightSpec::parse("0.5,x"), Err(Error::Config(_))));
}

#[test]
fn config_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fb.cfg");
    std::fs::write(&path, "# shorter run\nfalling_body.duration = 5\n").unwrap();
    let sc = Scenario::from_name("falling-body", &Config::load(&path).unwrap()).unwrap();
    let rec = run_scenario(&sc, Variant::Pu, &WeightSpec::Default, 0).unwrap();
    assert!((rec.times.last().unwrap() - 5.0).abs() < 1e-9);
}

#[test]
fn forms_agree_at_the_extremes() {
    let p = FallingBodyParams::default();
    let full = compare_forms(&p, &[1.0; 3], 5).unwrap();
    assert_eq!(full.variants, ["pu", "sr-pu", "ud-pu", "ekf"]);
    assert!(full.max_state_dev < 1e-9 && full.max_cov_dev < 1e-9, "{full:?}");
    let none = compare_forms(&p, &[0.0; 3], 5).unwrap();
    assert!(none.max_state_dev < 1e-12 && none.max_cov_dev < 1e-9, "{none:?}");
}

#[test]
fn tumbler_coarse_rate_on_clean_data() {
    let p = TumblerParams { noise_sigma: 0.0, ..TumblerParams::default() };
    let data = tumbler_truth(&p, 9);
    let frames = (p.init_window * p.frame_rate).round() as usize + 1;
    let (mean, _) = coarse_rate_init(&data.meas[..frames], p.dt()).unwrap();
    assert!((mean - data.omega).norm() <= 0.01 * data.omega.norm(), "{mean} vs {}", data.omega);
}

#[test]
fn coarse_rate_needs_frames() {
    assert!(coarse_rate_init(&[], 0.1).is_err());
}

#[test]
fn shipped_configs_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let stem = path.file_stem().unwrap().to_str().unwrap().to_string();
        let name = if stem.starts_with("falling_body") { "falling-body" } else { &stem.replace('_', "-") };
        let cfg = Config::load(&path).unwrap();
        Scenario::from_name(name, &cfg).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert_eq!(seen, 5);
}
