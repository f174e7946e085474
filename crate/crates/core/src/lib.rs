//! Small-sample inference for cluster randomized trials analysed with
//! random-intercept generalized linear mixed models.
//!
//! The crate provides the data model ([`model`]), a Laplace-approximation
//! GLMM engine ([`glmm`]), degrees-of-freedom rules and tests
//! ([`inference`]), a trial simulator ([`sim`]) and a Monte Carlo harness
//! ([`harness`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod glmm;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
