//! Square-root (Potter) filter with partial update.
//!
//! Factors are lower triangular with P = S·S'. Time updates and the partial
//! update both re-triangularize a stacked array with modified Gram-Schmidt.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::{cholesky_lower, mgs_triangularize, symmetric_sqrt};
use crate::filter::{Decorrelation, NonlinearSystem, ScalarSequence, UpdateWeights};

/// Transposed process-noise factor (G·Q^{1/2})' for use in [`sr_propagate`].
pub fn process_noise_factor_t(g: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qs = symmetric_sqrt(q)?;
    Ok((g * qs).transpose())
}

/// S⁻ from MGS of the stacked array [S⁺'·F' ; Q^{T/2}].
///
/// `q_sqrt_t` has n columns; any row count is accepted.
pub fn sr_propagate(s_plus: &DMatrix<f64>, f: &DMatrix<f64>, q_sqrt_t: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s_plus.nrows();
    let top = s_plus.transpose() * f.transpose();
    let mut stack = DMatrix::<f64>::zeros(n + q_sqrt_t.nrows(), n);
    stack.view_mut((0, 0), (n, n)).copy_from(&top);
    stack.view_mut((n, 0), (q_sqrt_t.nrows(), n)).copy_from(q_sqrt_t);
    mgs_triangularize(&stack).transpose()
}

/// Output of one Potter scalar step.
#[derive(Debug, Clone)]
pub struct PotterStep {
    pub x: DVector<f64>,
    /// Conventional posterior factor, generally not triangular.
    pub s: DMatrix<f64>,
    pub a: f64,
    pub phi: DVector<f64>,
    pub gain: DVector<f64>,
}

/// Potter update for one scalar measurement with residual `resid`.
pub fn potter_scalar_update(
    s_minus: &DMatrix<f64>,
    x_minus: &DVector<f64>,
    h_row: &DMatrix<f64>,
    r: f64,
    resid: f64,
) -> Result<PotterStep> {
    if !(r > 0.0) {
        return Err(Error::NonPositiveNoise(r));
    }
    let n = x_minus.len();
    let phi: DVector<f64> = s_minus.transpose() * h_row.transpose().column(0);
    let a = 1.0 / (phi.dot(&phi) + r);
    let b = 1.0 / (1.0 + (a * r).sqrt());
    let gain = a * (s_minus * &phi);
    let s = s_minus * (DMatrix::<f64>::identity(n, n) - a * b * &phi * phi.transpose());
    let x = x_minus + &gain * resid;
    Ok(PotterStep { x, s, a, phi, gain })
}

/// Square-root partial update after a Potter step.
///
/// S⁺⁺ comes from MGS of [S⁺' ; √a·φ'·S⁻'·Γ]; x⁺⁺ = Γx⁻ + (I−Γ)x⁺.
pub fn sr_partial_update_scalar(
    s_minus: &DMatrix<f64>,
    step: &PotterStep,
    w: &UpdateWeights,
    x_minus: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = x_minus.len();
    let g = w.gamma();
    let row = (step.phi.transpose() * s_minus.transpose()) * step.a.sqrt();
    let mut stack = DMatrix::<f64>::zeros(n + 1, n);
    stack.view_mut((0, 0), (n, n)).copy_from(&step.s.transpose());
    for j in 0..n {
        stack[(n, j)] = row[j] * g[j];
    }
    let s = mgs_triangularize(&stack).transpose();
    let x = DVector::from_fn(n, |i, _| g[i] * x_minus[i] + (1.0 - g[i]) * step.x[i]);
    (x, s)
}

/// Potter step followed by the square-root partial update.
pub fn sr_scalar_update(
    s_minus: &DMatrix<f64>,
    x_minus: &DVector<f64>,
    h_row: &DMatrix<f64>,
    r: f64,
    resid: f64,
    w: &UpdateWeights,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let step = potter_scalar_update(s_minus, x_minus, h_row, r, resid)?;
    Ok(sr_partial_update_scalar(s_minus, &step, w, x_minus))
}

/// Square-root partial update with a vector measurement processed at once.
///
/// The conventional factor comes from MGS of
/// [[R^{T/2}, 0], [S⁻'H', S⁻']], whose lower-right block is S⁺'. The
/// partial update then triangularizes [S⁺' ; R̃^{T/2}·H·P⁻·Γ] with
/// R̃ = (H·P⁻·H' + R)⁻¹.
pub fn sr_vector_update(
    s_minus: &DMatrix<f64>,
    x_minus: &DVector<f64>,
    h: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
    resid: &DVector<f64>,
    w: &UpdateWeights,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x_minus.len();
    let m = h.nrows();
    let p = s_minus * s_minus.transpose();
    let innov = crate::factor::symmetrize(&(h * &p * h.transpose() + r_cov));
    let chol = innov.clone().cholesky().ok_or(Error::SingularInnovation)?;
    let gain = chol.solve(&(h * &p)).transpose();

    let r_half = cholesky_lower(r_cov)?;
    let mut pre = DMatrix::<f64>::zeros(m + n, m + n);
    pre.view_mut((0, 0), (m, m)).copy_from(&r_half.transpose());
    pre.view_mut((m, 0), (n, m)).copy_from(&(s_minus.transpose() * h.transpose()));
    pre.view_mut((m, m), (n, n)).copy_from(&s_minus.transpose());
    let post = mgs_triangularize(&pre);
    let s_plus_t = post.view((m, m), (n, n)).into_owned();

    let r_tilde = chol.inverse();
    let rt_half = cholesky_lower(&crate::factor::symmetrize(&r_tilde))?;
    let g = w.gamma();
    let mut lower = rt_half.transpose() * h * &p;
    for j in 0..n {
        lower.column_mut(j).scale_mut(g[j]);
    }
    let mut stack = DMatrix::<f64>::zeros(n + m, n);
    stack.view_mut((0, 0), (n, n)).copy_from(&s_plus_t);
    stack.view_mut((n, 0), (m, n)).copy_from(&lower);
    let s = mgs_triangularize(&stack).transpose();

    let dx = &gain * resid;
    let x = DVector::from_fn(n, |i, _| x_minus[i] + (1.0 - g[i]) * dx[i]);
    Ok((x, s))
}

/// Sequential square-root partial update over all measurement components.
///
/// Correlated noise is whitened first; relinearization follows the
/// filter-core policy.
#[allow(clippy::too_many_arguments)]
pub fn sr_sequential_update(
    x: &DVector<f64>,
    s: &DMatrix<f64>,
    sys: &dyn NonlinearSystem,
    y: &DVector<f64>,
    k: usize,
    w: &UpdateWeights,
    relinearize: bool,
    mode: Decorrelation,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let seq = ScalarSequence::new(sys, x, y, k, relinearize, mode)?;
    let mut xc = x.clone();
    let mut sc = s.clone();
    for i in 0..seq.len() {
        let c = seq.component(i, &xc);
        let (xn, sn) = sr_scalar_update(&sc, &xc, &c.h, c.r, c.resid, w)?;
        xc = xn;
        sc = sn;
    }
    Ok((xc, sc))
}
