//! Sensitivity analysis for average derivative effects under a marginal
//! sensitivity model on the generalized propensity score.
//!
//! The bounds are affine in the sensitivity parameter, `ψ = a ± γ·b`, and are
//! estimated with cross-fitted, debiased influence functions.

pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod inference;
pub mod nuisance;
pub mod oracle;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
