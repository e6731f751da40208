//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {point:?} lies inside the inner cutoff |x| >= {cutoff}")]
    Domain { point: [f64; 3], cutoff: f64 },

    #[error("singular parameter: {0}")]
    Singular(String),

    #[error("degenerate surface at node {node}: {reason}")]
    DegenerateSurface { node: usize, reason: String },

    #[error("numerical failure: {message} (residual estimate {estimate:e})")]
    Numerical { message: String, estimate: f64 },

    #[error("solver did not converge after {iterations} iterations; residual trace {trace:?}")]
    NoConvergence { iterations: usize, trace: Vec<f64> },

    #[error("critical point search left the admissible region at xi = {xi:?}")]
    BoundaryEscape { xi: [f64; 3] },

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn numerical(msg: impl Into<String>, estimate: f64) -> Self {
        Error::Numerical {
            message: msg.into(),
            estimate,
        }
    }
}
