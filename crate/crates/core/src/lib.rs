//! Labor-market tightness toolkit.
//!
//! Builds occupation-by-region-by-year tightness panels from vacancy and
//! job-seeker counts, delineates commuting zones from commuting flows,
//! constructs leave-one-out instruments, imputes censored wages, and runs
//! high-dimensional fixed-effects OLS/2SLS wage regressions with
//! cluster-robust inference. A synthetic panel generator with known
//! ground-truth elasticity backs the Monte-Carlo test machinery.

pub mod analysis;
pub mod data;
pub mod error;
pub mod estimator;
pub mod imputation;
pub mod instruments;
pub mod panel;
pub mod par;
pub mod synth;
pub mod tightness;
pub mod tobit;
pub mod zones;

pub use error::{Error, Result};
