//! Finite-difference oracles for the scenario models.
//!
//! Each check returns the worst relative Frobenius error over its
//! evaluation points.

use nalgebra::{DMatrix, DVector, Vector3, Vector4};
use pukf::filter::NonlinearSystem;
use pukf::mekf::Quaternion;
use pukf::scenarios::falling_body::FallingBodyParams;
use pukf::scenarios::imu_cam::{self, ImuCamParams, NavState, ERR_DIM};
use pukf::scenarios::tumbler::TumblerModel;

use super::{gauss_vector, rel, rng};

fn step(x: f64) -> f64 {
    1e-6 * x.abs().max(1e-3)
}

/// Central-difference Jacobian with step 1e-6 relative.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, x.len());
    for c in 0..x.len() {
        let h = step(x[c]);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[c] += h;
        xm[c] -= h;
        j.set_column(c, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

/// Hessian of component `i` as the central difference of the analytic
/// Jacobian row.
pub fn fd_hessian_from_jacobian(jac: impl Fn(&DVector<f64>) -> DMatrix<f64>, x: &DVector<f64>, i: usize) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(n, n);
    for c in 0..n {
        let h = step(x[c]);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[c] += h;
        xm[c] -= h;
        let d = (jac(&xp).row(i) - jac(&xm).row(i)) / (2.0 * h);
        out.set_column(c, &d.transpose());
    }
    out
}

fn hess_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if b.norm() == 0.0 {
        a.norm()
    } else {
        rel(a, b)
    }
}

pub struct GradientReport {
    pub items: Vec<(&'static str, f64)>,
}

impl GradientReport {
    pub fn worst(&self) -> f64 {
        self.items.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

pub fn falling_body(points: usize) -> Vec<(&'static str, f64)> {
    let p = FallingBodyParams::default();
    let sys = p.model();
    let u = DVector::zeros(0);
    let mut g = rng(0xfb);
    let (mut ef, mut eh, mut ehf, mut ehh) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..points {
        let z = gauss_vector(&mut g, 3);
        let x = DVector::from_column_slice(&[
            20000.0 + 70000.0 * z[0].abs().min(1.0),
            -6096.0 + 1000.0 * z[1],
            0.005 + 0.045 * z[2].abs().min(1.0),
        ]);
        ef = ef.max(rel(&sys.f_jacobian(&x, &u, 0), &fd_jacobian(|v| sys.f(v, &u, 0), &x)));
        eh = eh.max(rel(&sys.h_jacobian(&x, 0), &fd_jacobian(|v| sys.h(v, 0), &x)));
        let fh = sys.f_hessians(&x, &u, 0).unwrap();
        for (i, hi) in fh.iter().enumerate() {
            let o = fd_hessian_from_jacobian(|v| sys.f_jacobian(v, &u, 0), &x, i);
            ehf = ehf.max(hess_rel(hi, &o));
        }
        let hh = sys.h_hessians(&x, 0).unwrap();
        let o = fd_hessian_from_jacobian(|v| sys.h_jacobian(v, 0), &x, 0);
        ehh = ehh.max(hess_rel(&hh[0], &o));
    }
    vec![("falling-body F", ef), ("falling-body H", eh), ("falling-body f Hessians", ehf), ("falling-body h Hessians", ehh)]
}

pub fn tumbler(points: usize) -> Vec<(&'static str, f64)> {
    let mut g = rng(0x7b);
    let (mut ef, mut eh, mut ehf) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..points {
        let n = 1 + k % 5;
        let sys = TumblerModel { n, dt: 1.0 / 30.0, r_f: 0.005 };
        let mut x = gauss_vector(&mut g, 3 * n + 3) * 0.2;
        for i in 0..3 {
            x[3 * n + i] *= 0.5;
        }
        let u = DVector::zeros(0);
        ef = ef.max(rel(&sys.f_jacobian(&x, &u, 0), &fd_jacobian(|v| sys.f(v, &u, 0), &x)));
        eh = eh.max(rel(&sys.h_jacobian(&x, 0), &fd_jacobian(|v| sys.h(v, 0), &x)));
        let fh = sys.f_hessians(&x, &u, 0).unwrap();
        for (i, hi) in fh.iter().enumerate() {
            let o = fd_hessian_from_jacobian(|v| sys.f_jacobian(v, &u, 0), &x, i);
            ehf = ehf.max(hess_rel(hi, &o));
        }
    }
    vec![("tumbler F", ef), ("tumbler H", eh), ("tumbler f Hessians", ehf)]
}

fn qdot(q: &Quaternion, w: &Vector3<f64>) -> Vector4<f64> {
    Quaternion::new(w[0], w[1], w[2], 0.0).multiply(q).0 * 0.5
}

fn small_angle_rate(qt: &Quaternion, qt_dot: &Vector4<f64>, qe: &Quaternion, qe_dot: &Vector4<f64>) -> Vector3<f64> {
    let d = qt.multiply(&qe.conjugate());
    let dd = Quaternion(*qt_dot).multiply(&qe.conjugate()).0 + qt.multiply(&Quaternion(*qe_dot).conjugate()).0;
    let (v, w) = (d.v(), d.w());
    let (vd, wd) = (Vector3::new(dd[0], dd[1], dd[2]), dd[3]);
    (vd * w - v * wd) * (2.0 / (w * w))
}

/// Exact time derivative of the error state for the nominal `xe`, the
/// true state xe ⊕ dx and noise n = [n_g, n_a, n_wg, n_wa].
pub fn imu_error_rate(
    xe: &NavState,
    dx: &DVector<f64>,
    n: &DVector<f64>,
    gyro: &Vector3<f64>,
    accel: &Vector3<f64>,
    g: &Vector3<f64>,
) -> DVector<f64> {
    let xt = imu_cam::perturb(xe, dx);
    let v3 = |i: usize| Vector3::new(n[i], n[i + 1], n[i + 2]);
    let we = gyro - xe.bg;
    let wt = gyro - xt.bg - v3(0);
    let ae = xe.q.dcm().transpose() * (accel - xe.ba) + g;
    let at = xt.q.dcm().transpose() * (accel - xt.ba - v3(3)) + g;
    let mut out = DVector::zeros(ERR_DIM);
    let dth = small_angle_rate(&xt.q, &qdot(&xt.q, &wt), &xe.q, &qdot(&xe.q, &we));
    let parts = [dth, xt.v - xe.v, at - ae, v3(6), v3(9), Vector3::zeros(), Vector3::zeros()];
    for (b, v) in parts.iter().enumerate() {
        out.fixed_rows_mut::<3>(3 * b).copy_from(v);
    }
    out
}

fn random_nav(p: &ImuCamParams, g: &mut rand_chacha::ChaCha8Rng) -> NavState {
    let base = imu_cam::initial_truth(p);
    let mut dx = gauss_vector(g, ERR_DIM) * 0.05;
    for i in 9..15 {
        dx[i] *= 0.1;
    }
    imu_cam::perturb(&base, &dx)
}

pub fn imu_cam(points: usize) -> Vec<(&'static str, f64)> {
    let p = ImuCamParams::default();
    let grav = p.gravity_vector();
    let cam = p.camera();
    let marks = p.landmarks();
    let mut g = rng(0x1c);
    let (mut ef, mut eg, mut eh) = (0.0f64, 0.0f64, 0.0f64);
    let zero_dx = DVector::zeros(ERR_DIM);
    let zero_n = DVector::zeros(12);
    for k in 0..points {
        let x = random_nav(&p, &mut g);
        let gyro = Vector3::from_column_slice(gauss_vector(&mut g, 3).as_slice()) * 0.3;
        let accel = x.q.dcm() * (-grav) + Vector3::from_column_slice(gauss_vector(&mut g, 3).as_slice());
        let (f, gm) = imu_cam::error_jacobians(&x, &gyro, &accel);
        let fo = fd_jacobian(|d| imu_error_rate(&x, d, &zero_n, &gyro, &accel, &grav), &zero_dx);
        let go = fd_jacobian(|n| imu_error_rate(&x, &zero_dx, n, &gyro, &accel, &grav), &zero_n);
        ef = ef.max(rel(&f, &fo));
        eg = eg.max(rel(&gm, &go));
        let pf = marks[k % marks.len()];
        if x.landmark_in_camera(&pf)[2] < 0.1 {
            continue;
        }
        let h = imu_cam::feature_jacobian(&x, &cam, &pf);
        let pix = |d: &DVector<f64>| {
            let u = cam.project_unchecked(&imu_cam::perturb(&x, d).landmark_in_camera(&pf));
            DVector::from_column_slice(u.as_slice())
        };
        eh = eh.max(rel(&h, &fd_jacobian(pix, &zero_dx)));
    }
    vec![("imu-cam F", ef), ("imu-cam G", eg), ("imu-cam H", eh)]
}

pub fn all(points: usize) -> GradientReport {
    let mut items = falling_body(points);
    items.extend(tumbler(points));
    items.extend(imu_cam(points));
    GradientReport { items }
}
