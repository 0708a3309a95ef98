//! Teacher-student deep Bayesian networks in the proportional regime.
//!
//! The library builds and samples multi-layer teacher networks with a noisy
//! readout channel, computes the coefficient recursions that let each hidden
//! layer be replaced by a linear map plus matched Gaussian noise, reduces a
//! deep model all the way to an equivalent generalized linear model, and
//! provides posterior Monte Carlo machinery (free entropy, mutual
//! information, Bayes prediction, generalization error, Nishimori
//! diagnostics) along with experiment suites that measure the concentration
//! rates behind the equivalence.
//!
//! Everything is seeded: one master seed plus a label-derived stream per
//! consumer, so runs are reproducible and parallelizable.

pub mod cli;
pub mod coefficients;
pub mod forward;
pub mod io;
pub mod lab;
pub mod logging;
pub mod model;
pub mod posterior_mc;
pub mod reduction;
pub mod rng;
pub mod stats;

use thiserror::Error;

/// Crate-wide error type. The variants map onto the CLI exit-code contract.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad invocation, unknown op, missing seed, unparsable config.
    #[error("config error: {0}")]
    Config(String),
    /// Unreadable or invalid model specification.
    #[error("spec error: {0}")]
    Spec(String),
    /// Shape mismatch between arrays and the owning spec.
    #[error("shape error: {0}")]
    Shape(String),
    /// Non-finite or otherwise failed numerics.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A Monte Carlo run was flagged as unconverged.
    #[error("convergence flag: {0}")]
    Convergence(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
