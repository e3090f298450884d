//! One estimator interface over the three covariance forms.
//!
//! [`Estimator`] holds a mean and a covariance in full, square-root or UD
//! form and dispatches propagation and partial updates to the matching
//! module, so scenario drivers can switch forms with a single flag.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::factor::{cholesky_lower, condition_number, udu_decompose};
use crate::filter::{
    batch_partial_update, ekf_propagate, sequential_update_with, Covariance, Decorrelation, NonlinearSystem,
    UpdateWeights,
};
use crate::sqrt::{process_noise_factor_t, sr_propagate, sr_sequential_update, sr_vector_update};
use crate::ud::{ud_propagate, ud_sequential_update, ud_vector_update};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Full,
    Sqrt,
    Ud,
}

impl Form {
    pub fn to_cov(self, p: &DMatrix<f64>) -> Result<Covariance> {
        Ok(match self {
            Form::Full => Covariance::Full(p.clone()),
            Form::Sqrt => Covariance::Sqrt(cholesky_lower(p)?),
            Form::Ud => Covariance::Ud(udu_decompose(p)?),
        })
    }
}

/// Filter state in one of the three forms.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub x: DVector<f64>,
    pub cov: Covariance,
    /// Process vector measurements one component at a time.
    pub sequential: bool,
    /// Re-evaluate the measurement Jacobian between components.
    pub relinearize: bool,
    pub decorrelation: Decorrelation,
}

impl Estimator {
    pub fn new(form: Form, x: DVector<f64>, p: &DMatrix<f64>) -> Result<Self> {
        let decorrelation = if form == Form::Ud { Decorrelation::Ud } else { Decorrelation::Cholesky };
        Ok(Self { x, cov: form.to_cov(p)?, sequential: true, relinearize: true, decorrelation })
    }

    pub fn form(&self) -> Form {
        match self.cov {
            Covariance::Full(_) => Form::Full,
            Covariance::Sqrt(_) => Form::Sqrt,
            Covariance::Ud(_) => Form::Ud,
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.cov.to_full()
    }

    pub fn sigma(&self) -> DVector<f64> {
        self.covariance().diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// Condition number of the full covariance.
    pub fn cond_full(&self) -> f64 {
        condition_number(&self.covariance())
    }

    /// Condition number of the stored factor: S, U·D^{1/2}, or P itself.
    pub fn cond_factor(&self) -> f64 {
        match &self.cov {
            Covariance::Full(p) => condition_number(p),
            Covariance::Sqrt(s) => condition_number(s),
            Covariance::Ud(f) => {
                let mut m = f.u.clone();
                for j in 0..m.ncols() {
                    m.column_mut(j).scale_mut(f.d[j].max(0.0).sqrt());
                }
                condition_number(&m)
            }
        }
    }

    pub fn propagate(&mut self, sys: &dyn NonlinearSystem, u: &DVector<f64>, k: usize) -> Result<()> {
        match &self.cov {
            Covariance::Full(p) => {
                let (x, p) = ekf_propagate(&self.x, p, sys, u, k)?;
                self.x = x;
                self.cov = Covariance::Full(p);
            }
            Covariance::Sqrt(s) => {
                let f = sys.f_jacobian(&self.x, u, k);
                let qt = process_noise_factor_t(&sys.g(), &sys.q())?;
                let s = sr_propagate(s, &f, &qt);
                self.x = checked(sys.f(&self.x, u, k))?;
                self.cov = Covariance::Sqrt(s);
            }
            Covariance::Ud(ud) => {
                let f = sys.f_jacobian(&self.x, u, k);
                let ud = ud_propagate(ud, &f, &sys.g(), &sys.q())?;
                self.x = checked(sys.f(&self.x, u, k))?;
                self.cov = Covariance::Ud(ud);
            }
        }
        Ok(())
    }

    /// Measurement update of `y` through the model's h.
    pub fn update(&mut self, sys: &dyn NonlinearSystem, y: &DVector<f64>, k: usize, w: &UpdateWeights) -> Result<()> {
        if !self.sequential {
            let h = sys.h_jacobian(&self.x, k);
            let resid = y - sys.h(&self.x, k);
            return self.update_linear(&h, &sys.r(), &resid, w);
        }
        match &self.cov {
            Covariance::Full(p) => {
                let (x, p) = sequential_update_with(&self.x, p, sys, y, k, w, self.relinearize, self.decorrelation)?;
                self.x = x;
                self.cov = Covariance::Full(p);
            }
            Covariance::Sqrt(s) => {
                let (x, s) = sr_sequential_update(&self.x, s, sys, y, k, w, self.relinearize, self.decorrelation)?;
                self.x = x;
                self.cov = Covariance::Sqrt(s);
            }
            Covariance::Ud(ud) => {
                let (x, ud) = ud_sequential_update(&self.x, ud, sys, y, k, w, self.relinearize, self.decorrelation)?;
                self.x = x;
                self.cov = Covariance::Ud(ud);
            }
        }
        Ok(())
    }

    /// Batch update with an explicit linearization and residual.
    pub fn update_linear(
        &mut self,
        h: &DMatrix<f64>,
        r_cov: &DMatrix<f64>,
        resid: &DVector<f64>,
        w: &UpdateWeights,
    ) -> Result<()> {
        match &self.cov {
            Covariance::Full(p) => {
                let (x, p) = batch_partial_update(&self.x, p, h, r_cov, resid, w)?;
                self.x = x;
                self.cov = Covariance::Full(p);
            }
            Covariance::Sqrt(s) => {
                let (x, s) = sr_vector_update(s, &self.x, h, r_cov, resid, w)?;
                self.x = x;
                self.cov = Covariance::Sqrt(s);
            }
            Covariance::Ud(ud) => {
                let (x, ud) = ud_vector_update(ud, &self.x, h, r_cov, resid, w)?;
                self.x = x;
                self.cov = Covariance::Ud(ud);
            }
        }
        Ok(())
    }

    /// Replaces mean and covariance, keeping the current form.
    pub fn reset(&mut self, x: DVector<f64>, p: &DMatrix<f64>) -> Result<()> {
        self.cov = self.form().to_cov(p)?;
        self.x = x;
        Ok(())
    }
}

fn checked(x: DVector<f64>) -> Result<DVector<f64>> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(crate::error::Error::NonFiniteState)
    }
}
