//! Daily click-volume prediction toolkit.
//!
//! The crate wires a tabular preprocessing stage, eleven base regressors
//! (two in-house gradient-boosted-tree variants plus nine linear-family
//! solvers), gain-driven recursive feature elimination, Gaussian-process
//! Bayesian hyperparameter tuning, and four ensembling strategies into a
//! rolling chronological evaluation harness.
//!
//! Entry points:
//! - [`dataset`]: load CSV tables, generate synthetic benchmark data,
//!   split chronologically.
//! - [`preprocess`]: impute, window-expand, seasonally decompose, one-hot
//!   encode, and min-max scale a table into a [`matrix::FeatureMatrix`].
//! - [`regressors`]: the uniform fit/predict model zoo.
//! - [`feature_select`]: importance ranking and recursive elimination.
//! - [`hyperopt`]: GP surrogate + expected-improvement tuning loop.
//! - [`ensemble`]: averaging, weighting, stacking, blending.
//! - [`evaluate`]: R² scoring, the rolling multi-day protocol, reports.
//! - [`runner`]: artifact-producing orchestration used by the CLI.

pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod evaluate;
pub mod feature_select;
pub mod hyperopt;
pub mod matrix;
pub mod preprocess;
pub mod regressors;
pub mod runner;
pub mod seeding;

pub use matrix::FeatureMatrix;
