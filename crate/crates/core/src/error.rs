//! Crate-wide error type and the exit-code policy for the CLI.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A hyper-parameter space definition is malformed.
    #[error("invalid space: {0}")]
    Space(String),

    /// A config, pin mask, or genotype does not fit its space.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Text or file content could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A rank correlation is undefined for the given vectors.
    #[error("correlation undefined: {0}")]
    Correlation(String),

    /// An evaluator could not produce a usable result.
    #[error("evaluation failed: {0}")]
    Eval(String),

    /// A run directory is missing, incomplete, or corrupt.
    #[error("archive {path}: {message}")]
    Archive { path: PathBuf, message: String },

    /// An underlying I/O operation failed.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error.
    ///
    /// `2` is a usage or input problem, `3` an evaluator failure, `4` a
    /// missing or corrupt run archive; anything else maps to `1`.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Space(_) | Error::Invalid(_) | Error::Parse(_) | Error::Correlation(_) => 2,
            Error::Eval(_) => 3,
            Error::Archive { .. } => 4,
            Error::Io(_) => 1,
        }
    }

    /// Shorthand for an archive error at `path`.
    pub fn archive(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Archive {
            path: path.into(),
            message: message.into(),
        }
    }
}
