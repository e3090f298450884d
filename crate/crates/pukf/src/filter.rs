//! Full-covariance EKF machinery and the partial update.
//!
//! The update weight βᵢ ∈ [0, 1] is the fraction of the nominal Kalman
//! correction applied to state i; γᵢ = 1 − βᵢ. With β = 1 the filter is a
//! plain EKF, with β = 0 the state is a consider (Schmidt) state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::{cholesky_lower, decorrelate_cholesky, decorrelate_ud, symmetrize};

/// Dynamics and measurement model with analytic derivatives.
///
/// `u` is an exogenous input; autonomous models ignore it.
pub trait NonlinearSystem: Sync {
    fn state_dim(&self) -> usize;
    fn meas_dim(&self) -> usize;
    fn f(&self, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> DVector<f64>;
    fn f_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> DMatrix<f64>;
    fn h(&self, x: &DVector<f64>, k: usize) -> DVector<f64>;
    fn h_jacobian(&self, x: &DVector<f64>, k: usize) -> DMatrix<f64>;
    /// Process noise map (n×q).
    fn g(&self) -> DMatrix<f64>;
    /// Process noise covariance (q×q).
    fn q(&self) -> DMatrix<f64>;
    /// Measurement noise covariance (m×m).
    fn r(&self) -> DMatrix<f64>;
    /// Hessians of each component of f, if known analytically.
    fn f_hessians(&self, _x: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> Option<Vec<DMatrix<f64>>> {
        None
    }
    /// Hessians of each component of h, if known analytically.
    fn h_hessians(&self, _x: &DVector<f64>, _k: usize) -> Option<Vec<DMatrix<f64>>> {
        None
    }
}

/// Linear time-invariant model x' = F x, y = H x.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl NonlinearSystem for LinearSystem {
    fn state_dim(&self) -> usize {
        self.f.nrows()
    }
    fn meas_dim(&self) -> usize {
        self.h.nrows()
    }
    fn f(&self, x: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> DVector<f64> {
        &self.f * x
    }
    fn f_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> DMatrix<f64> {
        self.f.clone()
    }
    fn h(&self, x: &DVector<f64>, _k: usize) -> DVector<f64> {
        &self.h * x
    }
    fn h_jacobian(&self, _x: &DVector<f64>, _k: usize) -> DMatrix<f64> {
        self.h.clone()
    }
    fn g(&self) -> DMatrix<f64> {
        self.g.clone()
    }
    fn q(&self) -> DMatrix<f64> {
        self.q.clone()
    }
    fn r(&self) -> DMatrix<f64> {
        self.r.clone()
    }
    fn f_hessians(&self, _x: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> Option<Vec<DMatrix<f64>>> {
        let n = self.state_dim();
        Some(vec![DMatrix::zeros(n, n); n])
    }
    fn h_hessians(&self, _x: &DVector<f64>, _k: usize) -> Option<Vec<DMatrix<f64>>> {
        let n = self.state_dim();
        Some(vec![DMatrix::zeros(n, n); self.meas_dim()])
    }
}

/// Per-state update fractions β with γ = 1 − β.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateWeights {
    beta: DVector<f64>,
}

impl UpdateWeights {
    pub fn new(beta: DVector<f64>) -> Result<Self> {
        for (i, &b) in beta.iter().enumerate() {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::WeightOutOfRange { index: i, value: b });
            }
        }
        Ok(Self { beta })
    }

    pub fn from_slice(beta: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(beta))
    }

    /// β = 1 everywhere: the conventional update.
    pub fn full(n: usize) -> Self {
        Self { beta: DVector::from_element(n, 1.0) }
    }

    /// β = 0 everywhere: a pure consider step.
    pub fn none(n: usize) -> Self {
        Self { beta: DVector::zeros(n) }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn gamma(&self) -> DVector<f64> {
        self.beta.map(|b| 1.0 - b)
    }

    /// Γ = I − diag(β).
    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.gamma())
    }

    pub fn is_full(&self) -> bool {
        self.beta.iter().all(|&b| b == 1.0)
    }
}

/// Covariance in one of the three interchangeable representations.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Full(DMatrix<f64>),
    /// Lower-triangular factor S with P = S·S'.
    Sqrt(DMatrix<f64>),
    Ud(crate::factor::UdFactors),
}

impl Covariance {
    pub fn to_full(&self) -> DMatrix<f64> {
        match self {
            Covariance::Full(p) => p.clone(),
            Covariance::Sqrt(s) => symmetrize(&(s * s.transpose())),
            Covariance::Ud(f) => f.reconstruct(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Full(p) => p.nrows(),
            Covariance::Sqrt(s) => s.nrows(),
            Covariance::Ud(f) => f.dim(),
        }
    }
}

/// Mean and covariance of a Gaussian state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: Covariance,
}

impl GaussianBelief {
    pub fn full(mean: DVector<f64>, p: DMatrix<f64>) -> Self {
        Self { mean, cov: Covariance::Full(p) }
    }
}

/// x⁻ = f(x), P⁻ = F·P·F' + G·Q·G'.
pub fn ekf_propagate(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    sys: &dyn NonlinearSystem,
    u: &DVector<f64>,
    k: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let f = sys.f_jacobian(x, u, k);
    let xm = sys.f(x, u, k);
    if xm.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    let g = sys.g();
    let pm = &f * p * f.transpose() + &g * sys.q() * g.transpose();
    Ok((xm, symmetrize(&pm)))
}

/// Kalman gain and innovation covariance S = H·P·H' + R.
///
/// The gain is obtained from a Cholesky solve against S.
pub fn kalman_gain(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = symmetrize(&(h * p * h.transpose() + r));
    let pht = p * h.transpose();
    let chol = s.clone().cholesky().ok_or(Error::SingularInnovation)?;
    let k = chol.solve(&pht.transpose()).transpose();
    Ok((k, s))
}

/// Linearized update with an explicit residual.
pub fn update_linearized(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
    resid: &DVector<f64>,
    joseph: bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (k, _) = kalman_gain(p, h, r_cov)?;
    let xp = x + &k * resid;
    let n = x.len();
    let ikh = DMatrix::<f64>::identity(n, n) - &k * h;
    let pp = if joseph {
        &ikh * p * ikh.transpose() + &k * r_cov * k.transpose()
    } else {
        &ikh * p
    };
    Ok((xp, symmetrize(&pp)))
}

/// Conventional EKF measurement update, optionally in Joseph form.
pub fn ekf_update(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    sys: &dyn NonlinearSystem,
    y: &DVector<f64>,
    k: usize,
    joseph: bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let h = sys.h_jacobian(x, k);
    let resid = y - sys.h(x, k);
    update_linearized(x, p, &h, &sys.r(), &resid, joseph)
}

/// Blends prior and posterior element by element.
///
/// xᵢ⁺⁺ = γᵢxᵢ⁻ + (1−γᵢ)xᵢ⁺ and P⁺⁺ᵢⱼ = γᵢγⱼP⁻ᵢⱼ + (1−γᵢγⱼ)P⁺ᵢⱼ.
pub fn partial_update(
    x_prior: &DVector<f64>,
    x_post: &DVector<f64>,
    p_prior: &DMatrix<f64>,
    p_post: &DMatrix<f64>,
    w: &UpdateWeights,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x_prior.len();
    if w.len() != n || x_post.len() != n || p_prior.nrows() != n || p_post.nrows() != n {
        return Err(Error::Dimension(format!("partial update with {} weights for {} states", w.len(), n)));
    }
    let g = w.gamma();
    let x = DVector::from_fn(n, |i, _| g[i] * x_prior[i] + (1.0 - g[i]) * x_post[i]);
    let p = DMatrix::from_fn(n, n, |i, j| {
        let gg = g[i] * g[j];
        gg * p_prior[(i, j)] + (1.0 - gg) * p_post[(i, j)]
    });
    Ok((x, p))
}

/// Schmidt consider update on a partitioned state [x; p].
///
/// The first `nx` states are estimated, the rest are considered: their
/// gain is forced to zero so the parameter mean and P_pp never change,
/// while the cross-covariance picks up the update.
#[allow(clippy::too_many_arguments)]
pub fn schmidt_update_block(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    nx: usize,
    hx: &DMatrix<f64>,
    hp: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    let np = n - nx;
    let pxx = p.view((0, 0), (nx, nx)).into_owned();
    let pxp = p.view((0, nx), (nx, np)).into_owned();
    let ppx = p.view((nx, 0), (np, nx)).into_owned();
    let ppp = p.view((nx, nx), (np, np)).into_owned();
    let xx = x.rows(0, nx).into_owned();
    let xp = x.rows(nx, np).into_owned();

    let w = symmetrize(
        &(hx * &pxx * hx.transpose()
            + hx * &pxp * hp.transpose()
            + hp * &ppx * hx.transpose()
            + hp * &ppp * hp.transpose()
            + r_cov),
    );
    let chol = w.cholesky().ok_or(Error::SingularInnovation)?;
    let kx = chol.solve(&(&pxx * hx.transpose() + &pxp * hp.transpose()).transpose()).transpose();

    let ikh = DMatrix::<f64>::identity(nx, nx) - &kx * hx;
    let new_xx = &ikh * &pxx - &kx * hp * &ppx;
    let new_xp = &ikh * &pxp - &kx * hp * &ppp;

    let mut out = DMatrix::<f64>::zeros(n, n);
    out.view_mut((0, 0), (nx, nx)).copy_from(&new_xx);
    out.view_mut((0, nx), (nx, np)).copy_from(&new_xp);
    out.view_mut((nx, 0), (np, nx)).copy_from(&new_xp.transpose());
    out.view_mut((nx, nx), (np, np)).copy_from(&ppp);

    let resid = y - hx * &xx - hp * &xp;
    let mut xo = x.clone();
    xo.rows_mut(0, nx).copy_from(&(&xx + &kx * resid));
    Ok((xo, symmetrize(&out)))
}

/// Mahalanobis gate: accept iff r'·S⁻¹·r ≤ threshold.
pub fn chi2_gate(r: &DVector<f64>, s: &DMatrix<f64>, threshold: f64) -> Result<bool> {
    Ok(mahalanobis2(r, s)? <= threshold)
}

/// Squared Mahalanobis distance r'·S⁻¹·r.
pub fn mahalanobis2(r: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let chol = symmetrize(s).cholesky().ok_or(Error::SingularInnovation)?;
    Ok(r.dot(&chol.solve(r)))
}

/// 0.99 quantiles of the χ² distribution for 1 to 6 degrees of freedom.
///
/// Standard table values, shipped as configuration defaults.
pub const CHI2_99: [f64; 6] = [6.63, 9.21, 11.34, 13.28, 15.09, 16.81];

/// How a correlated measurement noise is whitened before scalar processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Decorrelation {
    #[default]
    Cholesky,
    Ud,
}

/// Whitening transform T and the diagonal noise of T·y.
pub(crate) fn whitening(
    r_cov: &DMatrix<f64>,
    mode: Decorrelation,
) -> Result<(Option<DMatrix<f64>>, DVector<f64>)> {
    let m = r_cov.nrows();
    let diagonal = (0..m).all(|i| (0..m).all(|j| i == j || r_cov[(i, j)] == 0.0));
    if diagonal {
        return Ok((None, r_cov.diagonal()));
    }
    let eye = DMatrix::<f64>::identity(m, m);
    let zero = DVector::<f64>::zeros(m);
    match mode {
        Decorrelation::Cholesky => {
            let (t, _) = decorrelate_cholesky(r_cov, &eye, &zero)?;
            Ok((Some(t), DVector::from_element(m, 1.0)))
        }
        Decorrelation::Ud => {
            let (t, _, d) = decorrelate_ud(r_cov, &eye, &zero)?;
            Ok((Some(t), d))
        }
    }
}

/// One scalar measurement component, prepared for assimilation.
pub(crate) struct ScalarMeas {
    pub h: DMatrix<f64>,
    pub r: f64,
    pub resid: f64,
}

/// Iterates the whitened components of a vector measurement.
///
/// With `relinearize` the Jacobian and predicted measurement come from the
/// running estimate; otherwise the prior linearization is reused and the
/// residual is corrected linearly for the state change so far.
pub(crate) struct ScalarSequence<'a> {
    sys: &'a dyn NonlinearSystem,
    y: DVector<f64>,
    k: usize,
    t: Option<DMatrix<f64>>,
    rdiag: DVector<f64>,
    relinearize: bool,
    x0: DVector<f64>,
    h0: DMatrix<f64>,
    yhat0: DVector<f64>,
}

impl<'a> ScalarSequence<'a> {
    pub fn new(
        sys: &'a dyn NonlinearSystem,
        x_prior: &DVector<f64>,
        y: &DVector<f64>,
        k: usize,
        relinearize: bool,
        mode: Decorrelation,
    ) -> Result<Self> {
        let (t, rdiag) = whitening(&sys.r(), mode)?;
        let h0 = sys.h_jacobian(x_prior, k);
        let yhat0 = sys.h(x_prior, k);
        Ok(Self {
            sys,
            y: y.clone(),
            k,
            t,
            rdiag,
            relinearize,
            x0: x_prior.clone(),
            h0,
            yhat0,
        })
    }

    pub fn len(&self) -> usize {
        self.rdiag.len()
    }

    pub fn component(&self, i: usize, x: &DVector<f64>) -> ScalarMeas {
        let (h, yhat) = if self.relinearize {
            (self.sys.h_jacobian(x, self.k), self.sys.h(x, self.k))
        } else {
            (self.h0.clone(), &self.yhat0 + &self.h0 * (x - &self.x0))
        };
        let resid = &self.y - yhat;
        let (h, resid) = match &self.t {
            Some(t) => (t * h, t * resid),
            None => (h, resid),
        };
        ScalarMeas { h: h.rows(i, 1).into_owned(), r: self.rdiag[i], resid: resid[i] }
    }
}

/// Processes a vector measurement one component at a time.
///
/// Each scalar assimilation is followed by a partial update with `w`.
/// Correlated noise is whitened first.
pub fn sequential_update(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    sys: &dyn NonlinearSystem,
    y: &DVector<f64>,
    k: usize,
    w: &UpdateWeights,
    relinearize: bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    sequential_update_with(x, p, sys, y, k, w, relinearize, Decorrelation::Cholesky)
}

#[allow(clippy::too_many_arguments)]
pub fn sequential_update_with(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    sys: &dyn NonlinearSystem,
    y: &DVector<f64>,
    k: usize,
    w: &UpdateWeights,
    relinearize: bool,
    mode: Decorrelation,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let seq = ScalarSequence::new(sys, x, y, k, relinearize, mode)?;
    let mut xc = x.clone();
    let mut pc = p.clone();
    for i in 0..seq.len() {
        let c = seq.component(i, &xc);
        let rr = DMatrix::from_element(1, 1, c.r);
        let (xp, pp) =
            update_linearized(&xc, &pc, &c.h, &rr, &DVector::from_element(1, c.resid), false)?;
        let (xn, pn) = partial_update(&xc, &xp, &pc, &pp, w)?;
        xc = xn;
        pc = symmetrize(&pn);
    }
    Ok((xc, pc))
}

/// Full-form partial update with a batch vector measurement.
pub fn batch_partial_update(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
    resid: &DVector<f64>,
    w: &UpdateWeights,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (xp, pp) = update_linearized(x, p, h, r_cov, resid, false)?;
    let (xn, pn) = partial_update(x, &xp, p, &pp, w)?;
    Ok((xn, symmetrize(&pn)))
}

/// Checks that a factor reconstructs to something usable as a covariance.
pub fn is_positive_definite(p: &DMatrix<f64>) -> bool {
    cholesky_lower(p).is_ok()
}
