//! Closed-form operation counts for the update and propagation steps.
//!
//! Counts are multiplications and divisions. Square roots are tracked
//! separately in [`Flops::sqrts`] and count as one operation each in
//! [`Flops::total`].

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flops {
    pub ops: f64,
    pub sqrts: f64,
}

impl Flops {
    fn plain(ops: f64) -> Self {
        Self { ops, sqrts: 0.0 }
    }

    pub fn total(&self) -> f64 {
        self.ops + self.sqrts
    }
}

/// Conventional batch update for an m-vector measurement.
pub fn batch_update(n: f64, m: f64) -> f64 {
    m.powi(3) + 1.5 * n * m * m + 0.5 * m * m + n * m + 0.5 * m + 1.5 * m * n * n
}

/// Rows of the batch update count, in table order.
pub fn batch_update_rows(n: f64, m: f64) -> [f64; 5] {
    [
        m * n * n,
        n * (0.5 * m * m + 0.5 * m),
        m.powi(3) + 0.5 * m * m + 0.5 * m,
        n * m * m,
        (0.5 * (n * n - n) + n) * m,
    ]
}

/// One scalar update, before multiplying by m.
pub fn scalar_update(n: f64) -> f64 {
    1.5 * n * n + 2.5 * n + 1.0
}

/// Rows of the scalar update count, in table order.
pub fn scalar_update_rows(n: f64) -> [f64; 5] {
    [n * n, n, 1.0, n, 0.5 * (n * n - n) + n]
}

/// UDU factorization of R plus decorrelation of H and y.
pub fn decorrelation(n: f64, m: f64) -> f64 {
    2.0 / 3.0 * m.powi(3) + m * m - 5.0 / 3.0 * m + 0.5 * m * m * n - 0.5 * m * n
}

/// Sequential processing of m decorrelated scalars.
pub fn sequential_update(n: f64, m: f64) -> f64 {
    2.0 / 3.0 * m.powi(3) + m * m - 2.0 / 3.0 * m + 0.5 * m * m * n + 2.0 * m * n + 1.5 * m * n * n
}

/// Advantage of sequential over batch processing as tabulated.
///
/// This differs from `batch_update − sequential_update` by m³/6; see
/// [`sequential_advantage_exact`].
pub fn sequential_advantage(n: f64, m: f64) -> f64 {
    0.5 * m.powi(3) - 0.5 * m * m + m * m * n - m * n + 7.0 / 6.0 * m
}

/// `batch_update − sequential_update`.
pub fn sequential_advantage_exact(n: f64, m: f64) -> f64 {
    batch_update(n, m) - sequential_update(n, m)
}

/// Conventional Potter scalar update.
pub fn sqrt_update(n: f64) -> Flops {
    Flops { ops: 3.0 * n * n + 4.0 * n + 1.0, sqrts: 1.0 }
}

/// Extra cost of the square-root partial update, roughly one MGS.
pub fn sqrt_pu_extra(n: f64) -> Flops {
    Flops { ops: n.powi(3) + 3.0 * n * n + 3.0 * n, sqrts: n + 1.0 }
}

/// Square-root partial-update filter, propagation and update combined.
pub fn sqrt_pu_filter(n: f64, q: f64) -> Flops {
    Flops { ops: 2.5 * n.powi(3) + (q + 7.5) * n * n + 6.0 * n + 1.0, sqrts: 2.0 * n + 2.0 }
}

/// UD partial-update filter, propagation and update combined.
pub fn ud_pu_filter(n: f64, q: f64) -> Flops {
    Flops::plain(2.0 * n.powi(3) + (q + 4.0) * n * n + (q + 1.0) * n + 2.0)
}

/// Conventional UD scalar update.
pub fn ud_update(n: f64) -> Flops {
    Flops::plain(1.5 * n * n + 1.5 * n)
}

/// UD partial-update scalar update.
pub fn ud_pu_update(n: f64) -> Flops {
    Flops::plain(0.5 * n.powi(3) + 3.5 * n * n + n + 2.0)
}

/// Extra cost of the UD partial update over the conventional one.
pub fn ud_pu_extra(n: f64) -> Flops {
    Flops::plain(0.5 * n.powi(3) + 2.0 * n * n - 0.5 * n + 2.0)
}

/// One evaluated formula.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopEntry {
    pub table: &'static str,
    pub item: &'static str,
    pub ops: f64,
    pub sqrts: f64,
}

impl FlopEntry {
    fn new(table: &'static str, item: &'static str, f: Flops) -> Self {
        Self { table, item, ops: f.ops, sqrts: f.sqrts }
    }

    pub fn total(&self) -> f64 {
        self.ops + self.sqrts
    }
}

/// Every formula evaluated at (n, m, q).
pub fn flops_report(n: usize, m: usize, q: usize) -> Vec<FlopEntry> {
    let (n, m, q) = (n as f64, m as f64, q as f64);
    let p = Flops::plain;
    vec![
        FlopEntry::new("batch", "total", p(batch_update(n, m))),
        FlopEntry::new("sequential", "per_scalar", p(scalar_update(n))),
        FlopEntry::new("sequential", "decorrelation", p(decorrelation(n, m))),
        FlopEntry::new("sequential", "total", p(sequential_update(n, m))),
        FlopEntry::new("advantage", "tabulated", p(sequential_advantage(n, m))),
        FlopEntry::new("advantage", "batch_minus_sequential", p(sequential_advantage_exact(n, m))),
        FlopEntry::new("sqrt", "conventional_update", sqrt_update(n)),
        FlopEntry::new("sqrt", "pu_extra", sqrt_pu_extra(n)),
        FlopEntry::new("filter", "sqrt_pu", sqrt_pu_filter(n, q)),
        FlopEntry::new("filter", "ud_pu", ud_pu_filter(n, q)),
        FlopEntry::new("ud", "conventional_update", ud_update(n)),
        FlopEntry::new("ud", "pu_update", ud_pu_update(n)),
        FlopEntry::new("ud", "pu_extra", ud_pu_extra(n)),
    ]
}

/// CSV with columns `table,item,ops,sqrts,total`.
pub fn report_csv(entries: &[FlopEntry]) -> String {
    let mut s = String::from("table,item,ops,sqrts,total\n");
    for e in entries {
        let _ = writeln!(s, "{},{},{},{},{}", e.table, e.item, e.ops, e.sqrts, e.total());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors() {
        assert!((sequential_advantage(10.0, 1.0) - 7.0 / 6.0).abs() < 1e-12);
        assert_eq!(batch_update(3.0, 2.0), 62.0);
        assert_eq!(ud_update(3.0).total(), 18.0);
    }

    #[test]
    fn rows_sum_to_totals() {
        for n in 1..=20 {
            for m in 1..=20 {
                let (n, m) = (n as f64, m as f64);
                let b: f64 = batch_update_rows(n, m).iter().sum();
                assert!((b - batch_update(n, m)).abs() < 1e-9);
                let s: f64 = scalar_update_rows(n).iter().sum();
                assert!((s - scalar_update(n)).abs() < 1e-9);
                let seq = scalar_update(n) * m + decorrelation(n, m);
                assert!((seq - sequential_update(n, m)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tabulated_advantage_overshoots_by_cube_over_six() {
        for m in 1..=20 {
            let m = m as f64;
            let d = sequential_advantage(7.0, m) - sequential_advantage_exact(7.0, m);
            assert!((d - m.powi(3) / 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ud_extra_is_difference() {
        for n in 1..=20 {
            let n = n as f64;
            assert!((ud_pu_update(n).total() - ud_update(n).total() - ud_pu_extra(n).total()).abs() < 1e-9);
        }
    }
}
