//! Heckman sample-selection models with bivariate contaminated-normal errors.
//!
//! The crate fits two selection models to outcome data that is observed only
//! when a correlated latent index is positive:
//!
//! * `SLn` — the classical Heckman model with bivariate normal errors;
//! * `SLcn` — the same structure with bivariate contaminated-normal errors,
//!   a two-component normal scale mixture that absorbs mild outliers and
//!   inliers and exposes per-unit posterior contamination probabilities.
//!
//! Estimation is by an ECM algorithm whose E-step uses closed-form moments of
//! truncated (contaminated) normal distributions and whose CM-step updates
//! every parameter in closed form. Post-fit tooling covers empirical-information
//! standard errors, AIC/BIC and likelihood-ratio tests, normalized quantile
//! residuals with simulated envelopes, automatic inlier/outlier detection,
//! and a Monte Carlo harness for recovery experiments.
//!
//! Start with the runnable programs under `examples/`; each one exercises a
//! major capability end to end. The `heckman` binary wraps the same entry
//! points behind `fit`, `simulate`, `diagnose` and `curves` subcommands.

pub mod cli;
pub mod dist;
pub mod ecm;
pub mod error;
pub mod inference;
pub mod model;
pub mod sim;
pub mod trunc;

pub use error::{Error, Result};
pub use model::{ModelKind, SelectionData, Theta};
