//! Conditional selective inference for generalized-lasso-type estimators via
//! parametric quadratic programming.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cv_event;
mod error;
pub mod inference;
pub mod linalg;
pub mod pqp;
pub mod problems;

pub use error::{Error, Result};
