//! Factorization and orthogonalization kernels.
//!
//! Every filter form in this crate is built on these routines: Cholesky and
//! UDU' decompositions, modified Gram-Schmidt triangularization (plain and
//! weighted), the symmetric square root of a noise matrix, condition numbers
//! and the two measurement decorrelation transforms.
//!
//! Triangular factors are returned with non-negative diagonals so that
//! results from different code paths can be compared entry by entry.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative slack used when clamping tiny negative pivots to zero.
pub const PSD_TOL: f64 = 1e-10;

/// U·diag(D)·U' factors with U unit upper triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct UdFactors {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl UdFactors {
    pub fn identity(n: usize) -> Self {
        Self { u: DMatrix::identity(n, n), d: DVector::from_element(n, 1.0) }
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Rebuilds U·diag(D)·U'.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let ud = &self.u * DMatrix::from_diagonal(&self.d);
        symmetrize(&(ud * self.u.transpose()))
    }
}

/// (M + M')/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn scale_of(p: &DMatrix<f64>) -> f64 {
    let mut s: f64 = 1.0;
    for i in 0..p.nrows().min(p.ncols()) {
        s = s.max(p[(i, i)].abs());
    }
    s
}

/// Lower Cholesky factor L with L·L' = P.
///
/// Never clamps: a non-positive pivot is reported, since on the full
/// covariance path it means the covariance is already corrupted.
pub fn cholesky_lower(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::Dimension(format!("cholesky of {}x{}", n, p.ncols())));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut s = p[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if !(s > 0.0) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: s });
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = p[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// U·D·U' decomposition, eliminating from the bottom-right corner upward.
///
/// Pivots in `[-PSD_TOL·scale, 0]` are clamped to zero and the matching
/// column of U is set to the unit vector.
pub fn udu_decompose(p: &DMatrix<f64>) -> Result<UdFactors> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::Dimension(format!("udu of {}x{}", n, p.ncols())));
    }
    let tol = PSD_TOL * scale_of(p);
    let mut a = symmetrize(p);
    let mut u = DMatrix::<f64>::identity(n, n);
    let mut d = DVector::<f64>::zeros(n);
    for j in (0..n).rev() {
        let mut dj = a[(j, j)];
        if dj < -tol {
            return Err(Error::NotPositiveSemiDefinite { index: j, value: dj });
        }
        if dj <= 0.0 {
            dj = 0.0;
        }
        d[j] = dj;
        if dj > 0.0 {
            for i in 0..j {
                u[(i, j)] = a[(i, j)] / dj;
            }
            for k in 0..j {
                let ukj = u[(k, j)];
                for i in 0..=k {
                    let v = a[(i, k)] - u[(i, j)] * dj * ukj;
                    a[(i, k)] = v;
                    a[(k, i)] = v;
                }
            }
        }
    }
    Ok(UdFactors { u, d })
}

/// Symmetric square root V·D^{1/2}·V' of a PSD matrix.
///
/// The result M is symmetric, so M·M' = M'·M = Q and M' can be stacked
/// directly as the Q^{T/2} block of the square-root time update.
pub fn symmetric_sqrt(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = q.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let tol = PSD_TOL * scale_of(q);
    let eig = SymmetricEigen::new(symmetrize(q));
    let mut root = DVector::<f64>::zeros(n);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -tol {
            return Err(Error::NegativeEigenvalue(lam));
        }
        root[i] = lam.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    let m = v * DMatrix::from_diagonal(&root) * v.transpose();
    Ok(symmetrize(&m))
}

/// Modified Gram-Schmidt on the columns of a tall matrix.
///
/// Returns the n×n upper-triangular W with W'W = M'M and a non-negative
/// diagonal. A column that is already spent yields a zero row in W.
pub fn mgs_triangularize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    let mut a = m.clone();
    let mut w = DMatrix::<f64>::zeros(n, n);
    let col_scale: Vec<f64> = (0..n).map(|j| m.column(j).norm()).collect();
    for k in 0..n {
        let rkk = a.column(k).norm();
        if rkk <= 1e-15 * col_scale[k] || rkk == 0.0 {
            continue;
        }
        w[(k, k)] = rkk;
        let qk = a.column(k) / rkk;
        for j in (k + 1)..n {
            let rkj = qk.dot(&a.column(j));
            w[(k, j)] = rkj;
            let mut cj = a.column_mut(j);
            cj.axpy(-rkj, &qk, 1.0);
        }
    }
    w
}

/// Weighted modified Gram-Schmidt.
///
/// Given the n×(n+q) matrix W and weights D̂, returns (U, D̄) with
/// U·diag(D̄)·U' = W·diag(D̂)·W'. Rows are orthogonalized from the last
/// upward; a zero weighted norm gives a zero D̄ entry and a zero U column.
pub fn wmgs(w: &DMatrix<f64>, dhat: &DVector<f64>) -> Result<UdFactors> {
    let n = w.nrows();
    if w.ncols() != dhat.len() {
        return Err(Error::Dimension(format!(
            "wmgs weights {} for {} columns",
            dhat.len(),
            w.ncols()
        )));
    }
    if let Some(i) = dhat.iter().position(|&d| d < 0.0) {
        return Err(Error::NotPositiveSemiDefinite { index: i, value: dhat[i] });
    }
    let mut rows = w.clone();
    let mut u = DMatrix::<f64>::identity(n, n);
    let mut d = DVector::<f64>::zeros(n);
    for j in (0..n).rev() {
        let vj = rows.row(j).clone_owned();
        let dv = vj.component_mul(&dhat.transpose());
        let dj = dv.dot(&vj);
        if !(dj > 0.0) {
            d[j] = 0.0;
            continue;
        }
        d[j] = dj;
        for k in 0..j {
            let ukj = rows.row(k).dot(&dv) / dj;
            u[(k, j)] = ukj;
            for c in 0..rows.ncols() {
                rows[(k, c)] -= ukj * vj[c];
            }
        }
    }
    Ok(UdFactors { u, d })
}

/// Ratio of largest to smallest singular value; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves L·X = B for lower-triangular L by forward substitution.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Inverse of a unit upper-triangular matrix by back substitution.
pub fn unit_upper_inverse(u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for c in 0..n {
        for i in (0..c).rev() {
            let mut s = 0.0;
            for k in (i + 1)..=c {
                s += u[(i, k)] * inv[(k, c)];
            }
            inv[(i, c)] = -s;
        }
    }
    inv
}

/// Cholesky decorrelation of a correlated measurement.
///
/// With R = S_R·S_R', returns (S_R⁻¹H, S_R⁻¹r); the transformed noise has
/// identity covariance.
pub fn decorrelate_cholesky(
    r_cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let s = cholesky_lower(r_cov)?;
    let hz = solve_lower(&s, h);
    let rz = solve_lower(&s, &DMatrix::from_column_slice(r.len(), 1, r.as_slice()));
    Ok((hz, rz.column(0).into_owned()))
}

/// UD decorrelation of a correlated measurement.
///
/// With R_c = U_r·D_r·U_r', returns (U_r⁻¹H, U_r⁻¹r, D_r).
pub fn decorrelate_ud(
    r_cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let f = udu_decompose(r_cov)?;
    let uinv = unit_upper_inverse(&f.u);
    Ok((&uinv * h, &uinv * r, f.d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_diagonal() {
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let l = cholesky_lower(&p).unwrap();
        assert_relative_eq!(l, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_lower(&p), Err(Error::NotPositiveDefinite { index: 1, .. })));
    }

    #[test]
    fn udu_hand_example() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let f = udu_decompose(&p).unwrap();
        assert_relative_eq!(f.u, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        assert_relative_eq!(f.d, DVector::from_vec(vec![1.0, 1.0]));
    }

    #[test]
    fn udu_diagonal() {
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 3.0, 1.0]));
        let f = udu_decompose(&p).unwrap();
        assert_eq!(f.u, DMatrix::identity(3, 3));
        assert_eq!(f.d, DVector::from_vec(vec![5.0, 3.0, 1.0]));
    }

    #[test]
    fn udu_singular_is_tolerated() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = udu_decompose(&p).unwrap();
        assert_relative_eq!(f.reconstruct(), p, epsilon = 1e-14);
    }

    #[test]
    fn sqrt_diagonal_and_zero() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        assert_relative_eq!(
            symmetric_sqrt(&q).unwrap(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
            epsilon = 1e-14
        );
        assert_eq!(symmetric_sqrt(&DMatrix::zeros(3, 3)).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn sqrt_rejects_negative() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(symmetric_sqrt(&q), Err(Error::NegativeEigenvalue(_))));
    }

    #[test]
    fn mgs_examples() {
        let mut m = DMatrix::zeros(5, 3);
        m.view_mut((0, 0), (3, 3)).fill_with_identity();
        assert_relative_eq!(mgs_triangularize(&m), DMatrix::identity(3, 3));
        let col = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        assert_relative_eq!(mgs_triangularize(&col)[(0, 0)], 5.0);
    }

    #[test]
    fn wmgs_examples() {
        let w = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let f = wmgs(&w, &DVector::from_vec(vec![2.0, 3.0])).unwrap();
        assert_relative_eq!(f.d[0], 5.0);
        assert_eq!(f.u[(0, 0)], 1.0);

        let mut w = DMatrix::zeros(2, 4);
        w.view_mut((0, 0), (2, 2)).fill_with_identity();
        let f = wmgs(&w, &DVector::from_vec(vec![3.0, 7.0, 1.0, 1.0])).unwrap();
        assert_eq!(f.u, DMatrix::identity(2, 2));
        assert_eq!(f.d, DVector::from_vec(vec![3.0, 7.0]));
    }

    #[test]
    fn condition_examples() {
        assert_relative_eq!(condition_number(&DMatrix::identity(4, 4)), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 1.0]));
        assert_relative_eq!(condition_number(&d), 100.0, epsilon = 1e-12);
        assert!(condition_number(&DMatrix::zeros(2, 2)).is_infinite());
    }

    #[test]
    fn decorrelation_examples() {
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let (hz, rz) =
            decorrelate_cholesky(&r, &DMatrix::identity(2, 2), &DVector::from_vec(vec![2.0, 3.0]))
                .unwrap();
        assert_relative_eq!(hz, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0 / 3.0])));
        assert_relative_eq!(rz, DVector::from_vec(vec![1.0, 1.0]));

        let rc = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let (_, _, dr) =
            decorrelate_ud(&rc, &DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, 1.0]))
                .unwrap();
        assert_relative_eq!(dr, DVector::from_vec(vec![1.0, 1.0]));
    }

    #[test]
    fn unit_upper_inverse_roundtrip() {
        let u = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, -1.0, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0]);
        assert_relative_eq!(&u * unit_upper_inverse(&u), DMatrix::identity(3, 3), epsilon = 1e-14);
    }
}
