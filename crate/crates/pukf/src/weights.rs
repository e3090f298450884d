//! Online selection of the update weights.
//!
//! Both methods compare second-order EKF terms with first-order ones. DNL
//! uses the state-correction terms, DC the covariance-correction terms.
//! Each yields Γ = diag(γ) with γ saturated to [0, 1], and β = 1 − γ.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::symmetrize;
use crate::filter::{kalman_gain, NonlinearSystem, UpdateWeights};

/// How β is chosen at each measurement epoch.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightMode {
    Static(DVector<f64>),
    Dnl,
    Dc,
}

/// Weight selection rule with an optional pre-tuned baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPolicy {
    pub mode: WeightMode,
    pub baseline: Option<DVector<f64>>,
    /// Initial standard deviations used to normalize the scale factor.
    pub sigma0: DVector<f64>,
    /// States that receive dynamic weights. `None` means all. The others
    /// keep their baseline weight, or 1 without a baseline.
    pub dynamic_states: Option<Vec<bool>>,
}

impl WeightPolicy {
    pub fn fixed(beta: &[f64]) -> Self {
        Self { mode: WeightMode::Static(DVector::from_column_slice(beta)), baseline: None, sigma0: DVector::zeros(0), dynamic_states: None }
    }

    pub fn is_dynamic(&self) -> bool {
        !matches!(self.mode, WeightMode::Static(_))
    }
}

/// ½·Tr(Hess fᵢ · P) for every component.
pub fn second_order_state_term(hessians: &[DMatrix<f64>], p: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(hessians.len(), hessians.iter().map(|hs| 0.5 * (hs * p).trace()))
}

/// π = ½·K·[Tr(D₁P⁻), …, Tr(D_mP⁻)]'.
pub fn second_order_meas_term(hessians: &[DMatrix<f64>], p_minus: &DMatrix<f64>, k: &DMatrix<f64>) -> DVector<f64> {
    let t = DVector::from_iterator(hessians.len(), hessians.iter().map(|d| (d * p_minus).trace()));
    k * t * 0.5
}

/// Λ(i,j) = ½·Tr(Dᵢ·P⁻·Dⱼ·P⁻).
pub fn lambda_matrix(hessians: &[DMatrix<f64>], p_minus: &DMatrix<f64>) -> DMatrix<f64> {
    let m = hessians.len();
    let dp: Vec<DMatrix<f64>> = hessians.iter().map(|d| d * p_minus).collect();
    let l = DMatrix::from_fn(m, m, |i, j| 0.5 * (&dp[i] * &dp[j]).trace());
    symmetrize(&l)
}

/// γⱼ = min(1, f_r,ⱼ·|Yⱼ|/|Zⱼ|), with γⱼ = 1 when Zⱼ = 0.
pub fn dnl_select(y: &DVector<f64>, z: &DVector<f64>, f_r: &DVector<f64>) -> UpdateWeights {
    let n = y.len();
    let beta = DVector::from_fn(n, |j, _| {
        let g = if z[j] == 0.0 {
            1.0
        } else {
            (f_r[j] * y[j].abs() / z[j].abs()).min(1.0)
        };
        1.0 - g
    });
    UpdateWeights::new(beta.map(|b| b.clamp(0.0, 1.0))).expect("clamped weights")
}

/// fᵢ = (σ_k,ᵢ/σ₀,ᵢ)·Tr(H·P·H' + R)/Tr(R).
pub fn scale_factor(
    sigma_k: &DVector<f64>,
    sigma_0: &DVector<f64>,
    h: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
) -> DVector<f64> {
    let ratio = (h * p * h.transpose() + r_cov).trace() / r_cov.trace();
    sigma_k.component_div(sigma_0) * ratio
}

/// Covariance-aware selection.
///
/// δP = P⁻H'(HP⁻H'+R)⁻¹HP⁻, N = KΛ[(HP⁻H'+R)⁻¹Λ + I]⁻¹K' and
/// γⱼ = min(1, f_c,ⱼ·√(Nⱼⱼ/δPⱼⱼ)); δPⱼⱼ = 0 gives γⱼ = 0.
pub fn dc_select(
    p_minus: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    f_c: &DVector<f64>,
) -> Result<UpdateWeights> {
    let n = p_minus.nrows();
    let m = h.nrows();
    let s = symmetrize(&(h * p_minus * h.transpose() + r_cov));
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    let hp = h * p_minus;
    let k = chol.solve(&hp).transpose();
    let dp = &k * &hp;
    let inner = chol.solve(lambda) + DMatrix::<f64>::identity(m, m);
    let inner_inv = inner.lu().try_inverse().ok_or(Error::SingularInnovation)?;
    let nmat = &k * lambda * inner_inv * k.transpose();
    let beta = DVector::from_fn(n, |j, _| {
        let d = dp[(j, j)];
        let g = if d <= 0.0 {
            0.0
        } else {
            (f_c[j] * (nmat[(j, j)].max(0.0) / d).sqrt()).min(1.0)
        };
        1.0 - g
    });
    UpdateWeights::new(beta.map(|b| b.clamp(0.0, 1.0)))
}

/// β_eff = β_base·(1 − Γ_dyn).
pub fn apply_baseline(dynamic: &UpdateWeights, baseline: &DVector<f64>) -> Result<UpdateWeights> {
    UpdateWeights::new(baseline.component_mul(dynamic.beta()))
}

/// Central-difference Hessians of every output component of `func`.
///
/// The step for state i is 1e-5·max(1, |xᵢ|). Results are symmetrized.
pub fn finite_diff_hessians<F>(func: F, x: &DVector<f64>) -> Vec<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let f0 = func(x);
    let m = f0.len();
    let steps: Vec<f64> = (0..n).map(|i| 1e-5 * x[i].abs().max(1.0)).collect();
    let mut out = vec![DMatrix::<f64>::zeros(n, n); m];
    let eval = |di: Option<(usize, f64)>, dj: Option<(usize, f64)>| {
        let mut xp = x.clone();
        if let Some((i, s)) = di {
            xp[i] += s;
        }
        if let Some((j, s)) = dj {
            xp[j] += s;
        }
        func(&xp)
    };
    for i in 0..n {
        let hi = steps[i];
        let fp = eval(Some((i, hi)), None);
        let fm = eval(Some((i, -hi)), None);
        for c in 0..m {
            out[c][(i, i)] = (fp[c] - 2.0 * f0[c] + fm[c]) / (hi * hi);
        }
        for j in (i + 1)..n {
            let hj = steps[j];
            let fpp = eval(Some((i, hi)), Some((j, hj)));
            let fpm = eval(Some((i, hi)), Some((j, -hj)));
            let fmp = eval(Some((i, -hi)), Some((j, hj)));
            let fmm = eval(Some((i, -hi)), Some((j, -hj)));
            for c in 0..m {
                let v = (fpp[c] - fpm[c] - fmp[c] + fmm[c]) / (4.0 * hi * hj);
                out[c][(i, j)] = v;
                out[c][(j, i)] = v;
            }
        }
    }
    out
}

/// Per-run weight selection state.
///
/// For DNL the process term ½·Tr(Hess fᵢ·P) is accumulated over every
/// propagation step since the last measurement, each evaluated at that
/// step's posterior state and covariance; [`WeightSelector::select`]
/// consumes and resets it.
#[derive(Debug, Clone)]
pub struct WeightSelector {
    pub policy: WeightPolicy,
    acc: Option<DVector<f64>>,
}

fn process_hessians(sys: &dyn NonlinearSystem, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Vec<DMatrix<f64>> {
    sys.f_hessians(x, u, k).unwrap_or_else(|| finite_diff_hessians(|z| sys.f(z, u, k), x))
}

fn meas_hessians(sys: &dyn NonlinearSystem, x: &DVector<f64>, k: usize) -> Vec<DMatrix<f64>> {
    sys.h_hessians(x, k).unwrap_or_else(|| finite_diff_hessians(|z| sys.h(z, k), x))
}

impl WeightSelector {
    pub fn new(policy: WeightPolicy) -> Self {
        Self { policy, acc: None }
    }

    /// Call before propagating from (x, P).
    pub fn on_propagate(&mut self, sys: &dyn NonlinearSystem, x: &DVector<f64>, p: &DMatrix<f64>, u: &DVector<f64>, k: usize) {
        if self.policy.mode != WeightMode::Dnl {
            return;
        }
        let term = second_order_state_term(&process_hessians(sys, x, u, k), p);
        self.acc = Some(match self.acc.take() {
            Some(a) => a + term,
            None => term,
        });
    }

    /// Weights for the measurement `y` given the prior (x⁻, P⁻).
    pub fn select(
        &mut self,
        sys: &dyn NonlinearSystem,
        x: &DVector<f64>,
        p: &DMatrix<f64>,
        y: &DVector<f64>,
        k: usize,
    ) -> Result<UpdateWeights> {
        let n = x.len();
        let acc = self.acc.take().unwrap_or_else(|| DVector::zeros(n));
        let dynamic = match &self.policy.mode {
            WeightMode::Static(b) => return UpdateWeights::new(b.clone()),
            WeightMode::Dnl => {
                let h = sys.h_jacobian(x, k);
                let r = sys.r();
                let (gain, _) = kalman_gain(p, &h, &r)?;
                let pi = second_order_meas_term(&meas_hessians(sys, x, k), p, &gain);
                let yv = acc - pi;
                let z = &gain * (y - sys.h(x, k));
                let fr = self.scale(p, &h, &r);
                dnl_select(&yv, &z, &fr)
            }
            WeightMode::Dc => {
                let h = sys.h_jacobian(x, k);
                let r = sys.r();
                let lambda = lambda_matrix(&meas_hessians(sys, x, k), p);
                let fc = self.scale(p, &h, &r);
                dc_select(p, &h, &r, &lambda, &fc)?
            }
        };
        let dynamic = match &self.policy.dynamic_states {
            Some(mask) => {
                let b = DVector::from_fn(n, |j, _| if mask.get(j).copied().unwrap_or(true) { dynamic.beta()[j] } else { 1.0 });
                UpdateWeights::new(b)?
            }
            None => dynamic,
        };
        match &self.policy.baseline {
            Some(b) => apply_baseline(&dynamic, b),
            None => Ok(dynamic),
        }
    }

    fn scale(&self, p: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> DVector<f64> {
        let sigma_k = p.diagonal().map(|v| v.max(0.0).sqrt());
        scale_factor(&sigma_k, &self.policy.sigma0, h, p, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn state_term_examples() {
        assert_eq!(second_order_state_term(&[m1(0.0)], &m1(3.0))[0], 0.0);
        assert_eq!(second_order_state_term(&[m1(2.0)], &m1(2.0))[0], 2.0);
        assert_eq!(second_order_state_term(&[m1(2.0)], &m1(0.0))[0], 0.0);
    }

    #[test]
    fn meas_term_examples() {
        assert_eq!(second_order_meas_term(&[m1(0.0)], &m1(1.0), &m1(0.5))[0], 0.0);
        assert_eq!(second_order_meas_term(&[m1(2.0)], &m1(1.0), &m1(0.5))[0], 0.5);
        assert_eq!(second_order_meas_term(&[m1(2.0)], &m1(1.0), &m1(0.0))[0], 0.0);
    }

    #[test]
    fn dnl_examples() {
        let one = v(&[1.0]);
        assert_eq!(dnl_select(&v(&[0.0]), &v(&[3.0]), &one).beta()[0], 1.0);
        assert_eq!(dnl_select(&v(&[2.0]), &v(&[-2.0]), &one).beta()[0], 0.0);
        assert_relative_eq!(dnl_select(&v(&[0.2]), &v(&[1.0]), &one).beta()[0], 0.8, epsilon = 1e-15);
        assert_eq!(dnl_select(&v(&[0.2]), &v(&[0.0]), &one).beta()[0], 0.0);
    }

    #[test]
    fn scale_factor_examples() {
        let s = v(&[2.0]);
        assert_eq!(scale_factor(&s, &s, &m1(1.0), &m1(0.0), &m1(3.0))[0], 1.0);
        assert_eq!(scale_factor(&s, &s, &m1(1.0), &m1(3.0), &m1(3.0))[0], 2.0);
        assert_eq!(scale_factor(&v(&[0.0]), &s, &m1(1.0), &m1(3.0), &m1(3.0))[0], 0.0);
    }

    #[test]
    fn dc_examples() {
        let w = dc_select(&m1(1.0), &m1(1.0), &m1(1.0), &m1(0.0), &v(&[1.0])).unwrap();
        assert_eq!(w.beta()[0], 1.0);
        let w = dc_select(&m1(1.0), &m1(1.0), &m1(1.0), &m1(1.0), &v(&[1.0])).unwrap();
        assert_relative_eq!(1.0 - w.beta()[0], (1.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(w.beta()[0], 0.422_649_730_810_374, epsilon = 1e-9);
        let w = dc_select(&m1(1.0), &m1(1.0), &m1(1.0), &m1(1.0), &v(&[100.0])).unwrap();
        assert_eq!(w.beta()[0], 0.0);
    }

    #[test]
    fn baseline_examples() {
        let base = v(&[0.75]);
        let full = UpdateWeights::full(1);
        assert_eq!(apply_baseline(&full, &base).unwrap().beta()[0], 0.75);
        assert_eq!(apply_baseline(&UpdateWeights::none(1), &base).unwrap().beta()[0], 0.0);
        let w = UpdateWeights::from_slice(&[0.8]).unwrap();
        assert_relative_eq!(apply_baseline(&w, &base).unwrap().beta()[0], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn finite_diff_examples() {
        let lin = finite_diff_hessians(|x| v(&[2.0 * x[0] - x[1]]), &v(&[1.0, 2.0]));
        assert!(lin[0].iter().all(|e| e.abs() < 1e-4));
        let sq = finite_diff_hessians(|x| v(&[x[0] * x[0]]), &v(&[0.7]));
        assert_relative_eq!(sq[0][(0, 0)], 2.0, epsilon = 1e-6);
    }
}
