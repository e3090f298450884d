//! Partial-update Schmidt-Kalman filtering.
//!
//! A partial update applies a per-state fraction β of the Kalman correction
//! to both the mean and the covariance. β = 1 is the ordinary EKF update and
//! β = 0 turns a state into a consider parameter. The crate provides the
//! update in full-covariance, square-root and UD-factorized form, a
//! quaternion (multiplicative) variant, online weight selection, three
//! simulated benchmark problems and a Monte Carlo harness.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod engine;
pub mod error;
pub mod factor;
pub mod filter;
pub mod flops;
pub mod harness;
pub mod mekf;
pub mod rng;
pub mod scenarios;
pub mod sqrt;
pub mod ud;
pub mod weights;

pub use error::{Error, Result};
