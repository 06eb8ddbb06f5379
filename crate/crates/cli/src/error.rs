use aniso_tik_core::CoreError;
use thiserror::Error;

/// Shell-level failure with a process exit code: 1 for configuration or
/// validation problems, 2 for solver failures, 3 for I/O.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("selftest failed: {failed} of {total} checks")]
    SelftestFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Core validation errors surfaced while checking a config count as
    /// configuration problems, not solver failures.
    pub fn from_validation(e: CoreError) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::SelftestFailed { .. } => 2,
            CliError::Core(e) => match e {
                CoreError::Io { .. } | CoreError::Format { .. } => 3,
                CoreError::InvalidGrid(_)
                | CoreError::ShapeMismatch { .. }
                | CoreError::InvalidParam { .. }
                | CoreError::NonFinite { .. } => 1,
                CoreError::CgDidNotConverge { .. }
                | CoreError::SubproblemResidual { .. }
                | CoreError::FactorizationFailed(_)
                | CoreError::NotFactorized
                | CoreError::BracketFailure { .. }
                | CoreError::NonMonotoneResidual { .. } => 2,
            },
        }
    }
}
