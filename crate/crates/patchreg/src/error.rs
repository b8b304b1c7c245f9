use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VERIFICATION: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INTEGRITY: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config values or manifest contents.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed or corrupted file content.
    #[error("{path}: {detail}")]
    Integrity { path: PathBuf, detail: String },
    /// A check ran and failed.
    #[error("{0}")]
    Verification(String),
    #[error("training diverged at epoch {epoch}, pair {pair_id}: loss {loss}")]
    Diverged { epoch: usize, pair_id: String, loss: f64 },
    #[error(transparent)]
    Core(#[from] patchreg_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => exit::USAGE,
            CliError::Integrity { .. } => exit::INTEGRITY,
            CliError::Verification(_) | CliError::Diverged { .. } => exit::VERIFICATION,
            CliError::Core(patchreg_core::Error::Config(_) | patchreg_core::Error::Dimension { .. }) => exit::USAGE,
            CliError::Core(_) => exit::VERIFICATION,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn integrity(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CliError::Integrity {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
