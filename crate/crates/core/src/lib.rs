//! First-order Edgeworth corrections for spiked eigenvalues of sample
//! covariance matrices with non-Gaussian entries.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: sample covariance, symmetric eigendecomposition,
//!   leave-one-out / leave-two-out inverses and the pseudo-inverse.
//! - [`model`]: the spiked population model, standardized entry laws and
//!   data generation.
//! - [`edgeworth`]: centering, scaling, cumulant coefficients, the
//!   correction polynomial and Cornish-Fisher quantiles.
//! - [`moments`]: data-driven estimators of the fourth/sixth moment and the
//!   squared skewness of the entries.
//! - [`inference`]: pivots, confidence intervals and the spike-count
//!   estimator.
//! - [`harness`]: seeded, parallel Monte Carlo experiments.
//! - [`output`]: CSV / JSON serialization of experiment results.

pub mod edgeworth;
pub mod error;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod normal;
pub mod output;

pub use error::{Error, Result};
