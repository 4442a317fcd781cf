//! Library side of the `peps-kernel` command-line tool: configuration,
//! extraction pipeline, output files, verification checks and exports.

pub mod config;
pub mod export;
pub mod output;
pub mod pipeline;
pub mod verify;

pub use config::{ConfigError, RunConfig};

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status for configuration or input errors.
pub const EXIT_INPUT: i32 = 1;
/// Exit status when results were written but carry quality flags.
pub const EXIT_DEGRADED: i32 = 2;
/// Exit status for numerical failures that prevented any result.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kernel(#[from] peps_kernel::Error),
    #[error("{0}")]
    Input(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        use peps_kernel::Error as E;
        match self {
            RunError::Config(_) | RunError::Input(_) | RunError::Io { .. } => EXIT_INPUT,
            RunError::Kernel(e) => match e {
                E::InvalidArgument(_)
                | E::Unsupported(_)
                | E::Budget(_)
                | E::ExtentMismatch(_)
                | E::Format(_)
                | E::Io(_) => EXIT_INPUT,
                E::NonFinite(_)
                | E::NotSymmetric(_)
                | E::NotSquare(..)
                | E::Decomposition(_)
                | E::Convergence(_)
                | E::IndexOutOfRange(_) => EXIT_NUMERICAL,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;
