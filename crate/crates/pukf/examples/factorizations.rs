//! Factor a covariance three ways and compare condition numbers.

use nalgebra::DMatrix;
use pukf::factor::{cholesky_lower, condition_number, symmetric_sqrt, udu_decompose};

fn main() -> pukf::Result<()> {
    let p = DMatrix::from_row_slice(3, 3, &[9.0e4, 1.2e3, 0.4, 1.2e3, 3.6e5, -2.0, 0.4, -2.0, 0.1089]);
    let l = cholesky_lower(&p)?;
    let ud = udu_decompose(&p)?;
    let s = symmetric_sqrt(&p)?;
    println!("κ(P) = {:.4e}", condition_number(&p));
    println!("κ(L) = {:.4e}  (√κ(P) = {:.4e})", condition_number(&l), condition_number(&p).sqrt());
    println!("UDU' reconstruction error {:.2e}", (ud.reconstruct() - &p).norm() / p.norm());
    println!("S·S reconstruction error  {:.2e}", (&s * &s - &p).norm() / p.norm());
    println!("D = {:?}", ud.d.as_slice());
    Ok(())
}
