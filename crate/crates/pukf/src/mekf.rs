//! Quaternion algebra and the partial-update multiplicative EKF.
//!
//! Quaternions are stored scalar-last, q = [q₁ q₂ q₃ q₄] with vector part
//! first. The product follows the JPL convention so that direction cosine
//! matrices compose in the same order as quaternions:
//! C(a ⊗ b) = C(a)·C(b).
//!
//! A 90° rotation about z followed by another gives a 180° rotation:
//!
//! ```
//! use pukf::mekf::Quaternion;
//! let q = Quaternion::from_rotation_vector(&nalgebra::Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
//! let r = q.multiply(&q);
//! assert!((r.w().abs()) < 1e-12);
//! assert!((r.v()[2].abs() - 1.0).abs() < 1e-12);
//! ```
//!
//! Error states are small angles δθ with C(q) ≈ (I − [δθ×])·C(q̂), so a
//! correction is applied as q ← [½δθ; 1] ⊗ q followed by renormalization.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::factor::symmetrize;
use crate::filter::{kalman_gain, partial_update, Covariance, UpdateWeights};
use crate::sqrt::sr_vector_update;
use crate::ud::ud_vector_update;

/// Unit quaternion, scalar last.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion(pub Vector4<f64>);

/// Cross-product matrix [v×].
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

impl Quaternion {
    pub fn identity() -> Self {
        Self(Vector4::new(0.0, 0.0, 0.0, 1.0))
    }

    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self(Vector4::new(x, y, z, w))
    }

    pub fn v(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn w(&self) -> f64 {
        self.0[3]
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn normalize(&self) -> Self {
        Self(self.0 / self.0.norm())
    }

    pub fn conjugate(&self) -> Self {
        Self(Vector4::new(-self.0[0], -self.0[1], -self.0[2], self.0[3]))
    }

    /// Inverse of a unit quaternion.
    pub fn inverse(&self) -> Self {
        let c = self.conjugate();
        Self(c.0 / self.0.norm_squared())
    }

    /// a ⊗ b.
    pub fn multiply(&self, b: &Quaternion) -> Quaternion {
        quat_multiply(self, b)
    }

    /// Exact quaternion of the rotation vector θ (angle |θ| about θ/|θ|).
    pub fn from_rotation_vector(theta: &Vector3<f64>) -> Self {
        let angle = theta.norm();
        if angle < 1e-12 {
            let v = theta * 0.5;
            return Self(Vector4::new(v[0], v[1], v[2], 1.0)).normalize();
        }
        let s = (0.5 * angle).sin() / angle;
        Self(Vector4::new(theta[0] * s, theta[1] * s, theta[2] * s, (0.5 * angle).cos()))
    }

    /// Direction cosine matrix C(q) = (2q₄² − 1)I − 2q₄[q×] + 2qq'.
    pub fn dcm(&self) -> Matrix3<f64> {
        let v = self.v();
        let w = self.w();
        Matrix3::identity() * (2.0 * w * w - 1.0) - skew(&v) * (2.0 * w) + v * v.transpose() * 2.0
    }

    /// Quaternion whose DCM is the given proper rotation.
    pub fn from_dcm(c: &Matrix3<f64>) -> Self {
        let tr = c.trace();
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Vector4::new((c[(1, 2)] - c[(2, 1)]) / s, (c[(2, 0)] - c[(0, 2)]) / s, (c[(0, 1)] - c[(1, 0)]) / s, 0.25 * s)
        } else if c[(0, 0)] > c[(1, 1)] && c[(0, 0)] > c[(2, 2)] {
            let s = (1.0 + c[(0, 0)] - c[(1, 1)] - c[(2, 2)]).sqrt() * 2.0;
            Vector4::new(0.25 * s, (c[(0, 1)] + c[(1, 0)]) / s, (c[(0, 2)] + c[(2, 0)]) / s, (c[(1, 2)] - c[(2, 1)]) / s)
        } else if c[(1, 1)] > c[(2, 2)] {
            let s = (1.0 + c[(1, 1)] - c[(0, 0)] - c[(2, 2)]).sqrt() * 2.0;
            Vector4::new((c[(0, 1)] + c[(1, 0)]) / s, 0.25 * s, (c[(1, 2)] + c[(2, 1)]) / s, (c[(2, 0)] - c[(0, 2)]) / s)
        } else {
            let s = (1.0 + c[(2, 2)] - c[(0, 0)] - c[(1, 1)]).sqrt() * 2.0;
            Vector4::new((c[(0, 2)] + c[(2, 0)]) / s, (c[(1, 2)] + c[(2, 1)]) / s, 0.25 * s, (c[(0, 1)] - c[(1, 0)]) / s)
        };
        Self(q).normalize()
    }

    /// Rotation vector θ with from_rotation_vector(θ) = ±q, |θ| ≤ π.
    pub fn to_rotation_vector(&self) -> Vector3<f64> {
        let q = if self.w() < 0.0 { -self.0 } else { self.0 };
        let v = Vector3::new(q[0], q[1], q[2]);
        let s = v.norm();
        if s < 1e-12 {
            return v * 2.0;
        }
        v * (2.0 * s.atan2(q[3]) / s)
    }

    /// Small-angle rotation vector of this quaternion, 2·sign(q₄)·q_v.
    pub fn small_angle(&self) -> Vector3<f64> {
        let s = if self.w() < 0.0 { -2.0 } else { 2.0 };
        self.v() * s
    }
}

/// JPL product [a₄b_v + b₄a_v − a_v × b_v ; a₄b₄ − a_v·b_v].
pub fn quat_multiply(a: &Quaternion, b: &Quaternion) -> Quaternion {
    let av = a.v();
    let bv = b.v();
    let v = bv * a.w() + av * b.w() - av.cross(&bv);
    Quaternion(Vector4::new(v[0], v[1], v[2], a.w() * b.w() - av.dot(&bv)))
}

/// Normalized [½·β∘δθ ; 1].
pub fn small_angle_quat(dtheta: &Vector3<f64>, beta: &Vector3<f64>) -> Quaternion {
    let h = dtheta.component_mul(beta) * 0.5;
    Quaternion(Vector4::new(h[0], h[1], h[2], 1.0)).normalize()
}

/// One block of the error state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Quaternion with a 3-dimensional small-angle error.
    Attitude,
    /// Additive vector of the given length.
    Vector(usize),
}

/// Quaternion and additive blocks with an error-state covariance.
///
/// `layout` lists the blocks in error-state order. Quaternions are stored
/// in `quats` and additive states, concatenated, in `additive`, each in
/// the order they appear in the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MekfState {
    pub layout: Vec<Block>,
    pub quats: Vec<Quaternion>,
    pub additive: DVector<f64>,
    pub cov: Covariance,
}

/// Where a block lives in the error state and in storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIndex {
    pub block: Block,
    /// First error-state row.
    pub err: usize,
    /// Index into `quats` for attitude blocks, into `additive` otherwise.
    pub store: usize,
}

impl MekfState {
    pub fn new(layout: Vec<Block>, quats: Vec<Quaternion>, additive: DVector<f64>, cov: Covariance) -> Result<Self> {
        let nq = layout.iter().filter(|b| matches!(b, Block::Attitude)).count();
        let na: usize = layout.iter().map(|b| if let Block::Vector(n) = b { *n } else { 0 }).sum();
        if quats.len() != nq || additive.len() != na || cov.dim() != na + 3 * nq {
            return Err(Error::Dimension(format!(
                "layout wants {nq} quaternions, {na} additive states, error dimension {}",
                na + 3 * nq
            )));
        }
        Ok(Self { layout, quats, additive, cov })
    }

    pub fn error_dim(&self) -> usize {
        self.cov.dim()
    }

    /// Error-state offsets of every block.
    pub fn index_map(&self) -> Vec<BlockIndex> {
        let mut out = Vec::with_capacity(self.layout.len());
        let (mut err, mut qi, mut ai) = (0, 0, 0);
        for &b in &self.layout {
            match b {
                Block::Attitude => {
                    out.push(BlockIndex { block: b, err, store: qi });
                    err += 3;
                    qi += 1;
                }
                Block::Vector(n) => {
                    out.push(BlockIndex { block: b, err, store: ai });
                    err += n;
                    ai += n;
                }
            }
        }
        out
    }

    /// Applies an error-state correction that already carries its weights.
    ///
    /// Attitudes are corrected multiplicatively and renormalized, additive
    /// blocks additively.
    pub fn inject(&mut self, dx: &DVector<f64>) {
        let ones = Vector3::new(1.0, 1.0, 1.0);
        for bi in self.index_map() {
            match bi.block {
                Block::Attitude => {
                    let dth = Vector3::new(dx[bi.err], dx[bi.err + 1], dx[bi.err + 2]);
                    let dq = small_angle_quat(&dth, &ones);
                    self.quats[bi.store] = quat_multiply(&dq, &self.quats[bi.store]).normalize();
                }
                Block::Vector(n) => {
                    for i in 0..n {
                        self.additive[bi.store + i] += dx[bi.err + i];
                    }
                }
            }
        }
    }
}

/// Partial-update MEKF measurement step.
///
/// δx⁺⁺ = β∘(K·r) is injected into the nominal state; the error covariance
/// is partially updated with the same β by whichever backend holds it.
pub fn pu_mekf_update(
    state: &MekfState,
    h: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
    resid: &DVector<f64>,
    w: &UpdateWeights,
) -> Result<MekfState> {
    let d = state.error_dim();
    if h.ncols() != d || w.len() != d || h.nrows() != resid.len() {
        return Err(Error::Dimension(format!("MEKF update with H {}x{} for error dimension {d}", h.nrows(), h.ncols())));
    }
    let zero = DVector::<f64>::zeros(d);
    let (dx, cov) = match &state.cov {
        Covariance::Full(p) => {
            let (k, _) = kalman_gain(p, h, r_cov)?;
            let dx_full = &k * resid;
            let p_post = symmetrize(&((DMatrix::<f64>::identity(d, d) - &k * h) * p));
            let (dx, pp) = partial_update(&zero, &dx_full, p, &p_post, w)?;
            (dx, Covariance::Full(symmetrize(&pp)))
        }
        Covariance::Sqrt(s) => {
            let (dx, s) = sr_vector_update(s, &zero, h, r_cov, resid, w)?;
            (dx, Covariance::Sqrt(s))
        }
        Covariance::Ud(f) => {
            let (dx, f) = ud_vector_update(f, &zero, h, r_cov, resid, w)?;
            (dx, Covariance::Ud(f))
        }
    };
    let mut out = state.clone();
    out.cov = cov;
    out.inject(&dx);
    Ok(out)
}

/// Conventional MEKF update: full correction, covariance (I − KH)P⁻
/// computed in full form and refactored into the state's form.
pub fn mekf_update(state: &MekfState, h: &DMatrix<f64>, r_cov: &DMatrix<f64>, resid: &DVector<f64>) -> Result<MekfState> {
    let d = state.error_dim();
    if h.ncols() != d || h.nrows() != resid.len() {
        return Err(Error::Dimension(format!("MEKF update with H {}x{} for error dimension {d}", h.nrows(), h.ncols())));
    }
    let p = state.cov.to_full();
    let (k, _) = kalman_gain(&p, h, r_cov)?;
    let p_post = symmetrize(&((DMatrix::<f64>::identity(d, d) - &k * h) * &p));
    let mut out = state.clone();
    out.cov = match &state.cov {
        Covariance::Full(_) => Covariance::Full(p_post),
        Covariance::Sqrt(_) => Covariance::Sqrt(crate::factor::cholesky_lower(&p_post)?),
        Covariance::Ud(_) => Covariance::Ud(crate::factor::udu_decompose(&p_post)?),
    };
    out.inject(&(&k * resid));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_product() {
        let q = Quaternion::new(0.1, -0.2, 0.3, 0.9).normalize();
        assert_eq!(quat_multiply(&Quaternion::identity(), &q), q);
        let e = quat_multiply(&q, &q.inverse());
        assert_relative_eq!(e.0, Quaternion::identity().0, epsilon = 1e-12);
    }

    #[test]
    fn two_quarter_turns() {
        let q = Quaternion::from_rotation_vector(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        let r = q.multiply(&q);
        let c = r.dcm();
        assert_relative_eq!(c, q.dcm() * q.dcm(), epsilon = 1e-12);
        assert_relative_eq!(c[(0, 0)], -1.0, epsilon = 1e-12);
        assert_relative_eq!(c[(1, 1)], -1.0, epsilon = 1e-12);
        assert_relative_eq!(c[(2, 2)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn small_angle_examples() {
        let z = Vector3::zeros();
        let one = Vector3::new(1.0, 1.0, 1.0);
        assert_eq!(small_angle_quat(&z, &one), Quaternion::identity());
        assert_eq!(small_angle_quat(&Vector3::new(0.3, 0.1, 0.2), &z), Quaternion::identity());
        let q = small_angle_quat(&Vector3::new(0.02, 0.0, 0.0), &one);
        let exact = Quaternion::from_rotation_vector(&Vector3::new(0.02, 0.0, 0.0));
        let err = quat_multiply(&q, &exact.inverse()).small_angle().norm();
        assert!(err < 1e-5);
    }

    #[test]
    fn dcm_roundtrip() {
        let q = Quaternion::new(-0.3, 0.5, 0.1, -0.8).normalize();
        let back = Quaternion::from_dcm(&q.dcm());
        assert_relative_eq!(back.dcm(), q.dcm(), epsilon = 1e-12);
    }

    #[test]
    fn index_map_offsets() {
        let s = MekfState::new(
            vec![Block::Attitude, Block::Vector(2), Block::Attitude, Block::Vector(1)],
            vec![Quaternion::identity(); 2],
            DVector::zeros(3),
            Covariance::Full(DMatrix::identity(9, 9)),
        )
        .unwrap();
        let m = s.index_map();
        assert_eq!(m.iter().map(|b| (b.err, b.store)).collect::<Vec<_>>(), vec![(0, 0), (3, 0), (5, 1), (8, 2)]);
    }
}
