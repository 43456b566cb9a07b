//! Regression when a binary variable is measured by an error-prone
//! classifier and the ground truth is known only on an annotated subsample.
//!
//! The crate provides six estimators behind one interface — naive, feasible,
//! joint maximum likelihood (MLA), pseudo-likelihood, calibration/GMM, and
//! multiple imputation — plus a likelihood-ratio diagnostic for systematic
//! misclassification, a scenario simulator, and a replicated Monte Carlo
//! study runner with bias/efficiency/coverage summaries.
//!
//! Model formulas bind the surrogate to the ground truth with `||`:
//! `y ~ x || w + z` declares `w` as the classifier output standing in for
//! the partially observed covariate `x`; `y || w ~ x + z` puts the proxy on
//! the response instead.
//!
//! Replications and likelihood row sums are data-parallel; build with the
//! default `parallel` feature for a rayon-backed runner or without it for
//! the sequential fallback. Either way results are bitwise identical.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod formula;
pub mod glm;
pub mod mla;
pub mod montecarlo;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
