#![allow(dead_code)]

pub mod oracles;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample::<f64, _>(rand_distr::StandardNormal))
}

pub fn gauss_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.sample::<f64, _>(rand_distr::StandardNormal))
}

/// A·A' + εI, well conditioned enough for reconstruction tests.
pub fn spd(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = gauss_matrix(r, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

pub fn weights(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.random_range(0.0..=1.0))
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn relv(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Smallest eigenvalue ≥ −tol·max(1, ‖A‖).
pub fn is_psd(a: &DMatrix<f64>, tol: f64) -> bool {
    let e = a.clone().symmetric_eigen();
    e.eigenvalues.iter().all(|&l| l >= -tol * a.norm().max(1.0))
}

use pukf::engine::{Estimator, Form};
use pukf::filter::{LinearSystem, NonlinearSystem, UpdateWeights};
use pukf::weights::{WeightMode, WeightPolicy, WeightSelector};

/// Random stable 3-state linear system with a 2-vector measurement.
pub fn linear_system(seed: u64) -> LinearSystem {
    let mut g = rng(seed);
    let n = 3;
    LinearSystem {
        f: DMatrix::identity(n, n) + gauss_matrix(&mut g, n, n) * 0.05,
        h: gauss_matrix(&mut g, 2, n),
        g: DMatrix::identity(n, n),
        q: DMatrix::identity(n, n) * 0.01,
        r: DMatrix::identity(2, 2) * 0.2,
    }
}

/// Simulates `steps` epochs of `sys` and filters them with `mode`
/// (`None` for the plain EKF). Returns the estimate after each epoch.
pub fn linear_trajectory(sys: &LinearSystem, mode: Option<WeightMode>, seed: u64, steps: usize) -> Vec<DVector<f64>> {
    let n = sys.state_dim();
    let mut g = rng(seed);
    let u = DVector::zeros(0);
    let mut truth = gauss_vector(&mut g, n);
    let p0 = DMatrix::identity(n, n) * 2.0;
    let mut est = Estimator::new(Form::Full, DVector::zeros(n), &p0).unwrap();
    let policy = mode.map(|m| WeightPolicy {
        mode: m,
        baseline: None,
        sigma0: DVector::from_element(n, 2f64.sqrt()),
        dynamic_states: None,
    });
    let mut sel = policy.map(WeightSelector::new);
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        truth = sys.f(&truth, &u, k) + gauss_vector(&mut g, n) * 0.1;
        let y = sys.h(&truth, k) + gauss_vector(&mut g, 2) * 0.2f64.sqrt();
        if let Some(s) = sel.as_mut() {
            s.on_propagate(sys, &est.x, &est.covariance(), &u, k);
        }
        est.propagate(sys, &u, k).unwrap();
        let w = match sel.as_mut() {
            Some(s) => s.select(sys, &est.x, &est.covariance(), &y, k).unwrap(),
            None => UpdateWeights::full(n),
        };
        est.update(sys, &y, k, &w).unwrap();
        out.push(est.x.clone());
    }
    out
}
