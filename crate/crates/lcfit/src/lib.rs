//! Latent class models for binary indicators, with fast resampling tests
//! of model fit.
//!
//! The library fits a latent class model once by maximum likelihood
//! (multi-start EM), generates replicate datasets from the fitted model,
//! evaluates data-level statistics on each replicate, and reports empirical
//! p-values. The classical parametric bootstrap (refitting the model on
//! every replicate) is included as a baseline, together with a Monte Carlo
//! harness for type-I-error and power studies.

pub mod bootstrap;
pub mod cli;
pub mod contingency;
pub mod error;
pub mod lcmodel;
pub mod resampler;
pub mod seeding;
pub mod simharness;
pub mod statistics;

pub use contingency::{PatternTable, ResponsePattern};
pub use error::{Error, Result};
pub use lcmodel::{fit_em, log_likelihood, EmConfig, FitResult, LCParams};
pub use resampler::{generate_replicate, run_fit_test, TestConfig, TestReport};
pub use statistics::{evaluate, StatisticSpec};
