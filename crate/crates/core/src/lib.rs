//! Causal response estimation for crude interventions on complex objects.
//!
//! The crate estimates `E[Y | do(w), z]` for interventions `w` that act on a
//! high-dimensional object `X` only indirectly. A library of candidate
//! mediator features `φ_i(x, z)` links the two stages:
//!
//! 1. stage one learns `g_i(w, z) = E[φ_i(X, Z) | w, z]` with any regressor;
//! 2. stage two fits a sparse linear model `Y ≈ θ₀ + θᵀ g(w, z)`.
//!
//! For a new intervention only stage one is refit, on unlabeled data, and the
//! stage-two weights are reused. The [`mediation`] module then tests which
//! features with nonzero weight respond to `W` given `Z`.
//!
//! Module map:
//! - [`dataset`]: regime-indexed samples, CSV IO, split protocol.
//! - [`features`]: the feature library `Φ` and the quadrant convolution bank.
//! - [`regress`]: lasso, ridge/OLS, random forest, gradient boosting.
//! - [`stats`]: one-sided Wilcoxon tests and Holm adjustment.
//! - [`estimator`]: the two-stage pipeline.
//! - [`mediation`]: mediator selection and the four-way partition of `Φ`.
//! - [`simgen`]: the image-perturbation benchmark and a linear-Gaussian testbed.
//! - [`harness`]: evaluation protocol, reports, and the CLI entry point.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod features;
pub mod harness;
pub mod matrix;
pub mod mediation;
pub mod regress;
pub mod seeds;
pub mod simgen;
pub mod stats;

pub use error::{Error, Result};
pub use matrix::Matrix;
