//! Fitting power spectral densities to covariance or state-covariance
//! estimates by minimizing a quasi-distance to a prior spectrum.
//!
//! The exact moment-matching problem is solved through its finite-dimensional
//! dual. Two regularized variants handle estimates that admit no interpolant:
//! a quadratic penalty on the matching defect (primal regularization) and a
//! barrier term added to the dual (dual regularization).

pub mod cli;
pub mod divergences;
pub mod dual_solvers;
pub mod error;
pub mod moments;
pub mod spectral_core;

pub use error::{Error, Result};
