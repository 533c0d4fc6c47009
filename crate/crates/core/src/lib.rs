//! Two-stage survey weighting.
//!
//! Respondents first receive inverse-propensity weights from a penalized
//! logistic response model fitted on the sampling frame ([`propensity`]).
//! Those weights are then calibrated to population benchmarks by
//! post-stratification or raking, trimmed and rescaled ([`calibration`]).
//! [`estimation`] turns final weights into means, totals and ratios with
//! variance estimates, and [`simulator`] scores the whole pipeline against
//! a synthetic ground truth.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimation;
pub mod numeric;
pub mod propensity;
pub mod simulator;

pub use error::{Error, Result};
