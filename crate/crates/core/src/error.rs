use thiserror::Error;

/// Errors raised by the simulation and numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument {name}={value} outside of {domain}")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("offspring law rejected: {0}")]
    InvalidLaw(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("regime violation: {0}")]
    Regime(String),

    #[error("population exceeded hard cap of {cap} particles at time {time}")]
    PopulationExplosion { cap: usize, time: f64 },

    #[error("numerical tolerance unmet: {what} (estimate {estimate:e}, tolerance {tolerance:e})")]
    Tolerance {
        what: String,
        estimate: f64,
        tolerance: f64,
    },

    #[error("fixed-point iteration did not contract after {sweeps} sweeps (residual {residual:e})")]
    NonContraction { sweeps: usize, residual: f64 },

    #[error("too few samples: {given} given, {needed} needed")]
    TooFewSamples { given: usize, needed: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
