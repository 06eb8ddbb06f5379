use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the numerical kernels and file formats.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("non-finite value at index {index} in {what}")]
    NonFinite { what: String, index: usize },

    #[error("conjugate gradient stalled: relative residual {residual:.3e} after {iters} iterations (target {target:.1e})")]
    CgDidNotConverge {
        residual: f64,
        iters: usize,
        target: f64,
    },

    #[error("{what}: residual {residual:.3e} exceeds required {required:.1e}")]
    SubproblemResidual {
        what: &'static str,
        residual: f64,
        required: f64,
    },

    #[error("sparse factorization failed: {0}")]
    FactorizationFailed(String),

    #[error("system is not factorized; call factorize first")]
    NotFactorized,

    #[error(
        "discrepancy bracket failure: residual {lo_residual:.6e} at alpha={lo_alpha:.3e} and \
         {hi_residual:.6e} at alpha={hi_alpha:.3e} do not bracket target {target:.6e}"
    )]
    BracketFailure {
        lo_alpha: f64,
        hi_alpha: f64,
        lo_residual: f64,
        hi_residual: f64,
        target: f64,
    },

    #[error(
        "data residual is not monotone in alpha: {later:.6e} at alpha={alpha_later:.3e} is below \
         {earlier:.6e} at alpha={alpha_earlier:.3e}"
    )]
    NonMonotoneResidual {
        alpha_earlier: f64,
        alpha_later: f64,
        earlier: f64,
        later: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed {format} file: {reason}")]
    Format {
        path: PathBuf,
        format: &'static str,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, format: &'static str, reason: impl Into<String>) -> Self {
        CoreError::Format {
            path: path.into(),
            format,
            reason: reason.into(),
        }
    }
}
