//! UD-factorized filter with partial update.
//!
//! P = U·diag(D)·U' with U unit upper triangular. The time update uses
//! weighted MGS; the measurement update forms a small inner matrix and
//! refactors it, so the conventional UD update is the Γ = 0 case.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::{symmetrize, udu_decompose, unit_upper_inverse, wmgs, UdFactors};
use crate::filter::{Decorrelation, NonlinearSystem, ScalarSequence, UpdateWeights};

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// WMGS time update with W = [F·U, G] and D̂ = diag(D, Q).
///
/// A non-diagonal Q is factored as U_q·D_q·U_q' and folded into G first.
pub fn ud_propagate(
    ud: &UdFactors,
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<UdFactors> {
    let n = ud.dim();
    let (g_eff, q_d) = if is_diagonal(q) {
        (g.clone(), q.diagonal())
    } else {
        let qf = udu_decompose(q)?;
        (g * &qf.u, qf.d)
    };
    let nq = g_eff.ncols();
    let mut w = DMatrix::<f64>::zeros(n, n + nq);
    w.view_mut((0, 0), (n, n)).copy_from(&(f * &ud.u));
    w.view_mut((0, n), (n, nq)).copy_from(&g_eff);
    let mut dhat = DVector::<f64>::zeros(n + nq);
    dhat.rows_mut(0, n).copy_from(&ud.d);
    dhat.rows_mut(n, nq).copy_from(&q_d);
    wmgs(&w, &dhat)
}

/// Gain terms from the prior factors.
#[derive(Debug, Clone)]
pub struct UdGain {
    /// K = U·D·w·A (n×m).
    pub k: DMatrix<f64>,
    /// A = (w'·D·w + R)⁻¹ (m×m).
    pub a: DMatrix<f64>,
    /// w = U'·H' (n×m).
    pub w: DMatrix<f64>,
}

pub fn ud_gain(ud: &UdFactors, h: &DMatrix<f64>, r_cov: &DMatrix<f64>) -> Result<UdGain> {
    let w = ud.u.transpose() * h.transpose();
    let dw = DMatrix::from_diagonal(&ud.d) * &w;
    let innov = symmetrize(&(w.transpose() * &dw + r_cov));
    let a = innov.cholesky().ok_or(Error::SingularInnovation)?.inverse();
    let k = &ud.u * &dw * &a;
    Ok(UdGain { k, a, w })
}

/// UD partial update.
///
/// With L = (D·w)·A·(D·w)', the inner matrix
/// D − L + U⁻¹ΓU·L·U'ΓU⁻' is refactored as 𝒰·𝒟·𝒰'; then U⁺⁺ = U·𝒰 and
/// D⁺⁺ = 𝒟. The state moves by (I − Γ)·K·r.
pub fn ud_partial_update(
    ud: &UdFactors,
    gain: &UdGain,
    weights: &UpdateWeights,
    x_minus: &DVector<f64>,
    resid: &DVector<f64>,
) -> Result<(DVector<f64>, UdFactors)> {
    let n = ud.dim();
    let g = weights.gamma();
    let dw = DMatrix::from_diagonal(&ud.d) * &gain.w;
    let l = &dw * &gain.a * dw.transpose();
    let mut inner = DMatrix::from_diagonal(&ud.d) - &l;
    if g.iter().any(|&v| v != 0.0) {
        let uinv = unit_upper_inverse(&ud.u);
        let mut gu = ud.u.clone();
        for i in 0..n {
            gu.row_mut(i).scale_mut(g[i]);
        }
        let t = &uinv * gu;
        inner += &t * &l * t.transpose();
    }
    let f = udu_decompose(&symmetrize(&inner))?;
    let dx = &gain.k * resid;
    let x = DVector::from_fn(n, |i, _| x_minus[i] + (1.0 - g[i]) * dx[i]);
    Ok((x, UdFactors { u: &ud.u * f.u, d: f.d }))
}

/// Gain plus partial update for a measurement processed as one vector.
pub fn ud_vector_update(
    ud: &UdFactors,
    x_minus: &DVector<f64>,
    h: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
    resid: &DVector<f64>,
    weights: &UpdateWeights,
) -> Result<(DVector<f64>, UdFactors)> {
    let gain = ud_gain(ud, h, r_cov)?;
    ud_partial_update(ud, &gain, weights, x_minus, resid)
}

/// Component-by-component UD partial update.
///
/// Correlated noise is decorrelated first, with UD factors by default.
#[allow(clippy::too_many_arguments)]
pub fn ud_sequential_update(
    x: &DVector<f64>,
    ud: &UdFactors,
    sys: &dyn NonlinearSystem,
    y: &DVector<f64>,
    k: usize,
    w: &UpdateWeights,
    relinearize: bool,
    mode: Decorrelation,
) -> Result<(DVector<f64>, UdFactors)> {
    let seq = ScalarSequence::new(sys, x, y, k, relinearize, mode)?;
    let mut xc = x.clone();
    let mut fc = ud.clone();
    for i in 0..seq.len() {
        let c = seq.component(i, &xc);
        let rr = DMatrix::from_element(1, 1, c.r);
        let (xn, fnew) = ud_vector_update(&fc, &xc, &c.h, &rr, &DVector::from_element(1, c.resid), w)?;
        xc = xn;
        fc = fnew;
    }
    Ok((xc, fc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{kalman_gain, partial_update, update_linearized};
    use approx::assert_relative_eq;

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut v = seed as f64 * 0.1;
        let a = DMatrix::from_fn(n, n, |_, _| {
            v = (v * 2.736_1 + 0.577_215_66).fract();
            v - 0.5
        });
        &a * a.transpose() + DMatrix::identity(n, n) * 0.3
    }

    #[test]
    fn propagate_scalar() {
        let ud = UdFactors::identity(1);
        let out = ud_propagate(&ud, &m1(2.0), &m1(1.0), &m1(1.0)).unwrap();
        assert_eq!(out.u[(0, 0)], 1.0);
        assert_relative_eq!(out.d[0], 5.0);
    }

    #[test]
    fn propagate_matches_full() {
        let p = spd(3, 4);
        let ud = udu_decompose(&p).unwrap();
        let f = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.0, 1.0, 0.1, 0.2, 0.0, 0.9]);
        let g = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let q = DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]);
        let out = ud_propagate(&ud, &f, &g, &q).unwrap();
        let full = &f * &p * f.transpose() + &g * &q * g.transpose();
        assert_relative_eq!(out.reconstruct(), full, epsilon = 1e-12);
    }

    #[test]
    fn gain_scalar() {
        let g = ud_gain(&UdFactors::identity(1), &m1(1.0), &m1(1.0)).unwrap();
        assert_relative_eq!(g.w[(0, 0)], 1.0);
        assert_relative_eq!(g.a[(0, 0)], 0.5);
        assert_relative_eq!(g.k[(0, 0)], 0.5);
    }

    #[test]
    fn gain_matches_full() {
        let p = spd(4, 9);
        let ud = udu_decompose(&p).unwrap();
        let h = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.2, 0.0, 0.0, 0.5, 0.0, 1.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.2]);
        let g = ud_gain(&ud, &h, &r).unwrap();
        let (k, _) = kalman_gain(&p, &h, &r).unwrap();
        assert_relative_eq!(g.k, k, epsilon = 1e-12);
    }

    #[test]
    fn partial_matches_full() {
        let p = spd(3, 2);
        let ud = udu_decompose(&p).unwrap();
        let h = DMatrix::from_row_slice(1, 3, &[0.7, -0.1, 1.0]);
        let x = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let resid = DVector::from_element(1, 0.9);
        for beta in [[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.9, 0.9, 0.75]] {
            let w = UpdateWeights::from_slice(&beta).unwrap();
            let (xu, fu) = ud_vector_update(&ud, &x, &h, &m1(0.4), &resid, &w).unwrap();
            let (xp, pp) = update_linearized(&x, &p, &h, &m1(0.4), &resid, false).unwrap();
            let (xf, pf) = partial_update(&x, &xp, &p, &pp, &w).unwrap();
            assert_relative_eq!(fu.reconstruct(), pf, epsilon = 1e-12);
            assert_relative_eq!(xu, xf, epsilon = 1e-12);
            for i in 0..3 {
                assert_eq!(fu.u[(i, i)], 1.0);
            }
        }
    }
}
