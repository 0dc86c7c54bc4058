//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    InvalidShape(String),

    #[error("invalid roi{}: {reason}", fmt_index(*index))]
    InvalidRoi { index: Option<usize>, reason: String },

    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),

    #[error("incompatible phoc config: {0}")]
    ConfigMismatch(String),

    #[error("undefined distance: vector has zero norm")]
    UndefinedDistance,

    #[error("training diverged at iteration {iteration} (lr {lr:e}): loss is not finite")]
    Diverged { iteration: usize, lr: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Annotation {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for validation errors, 2 for runtime
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::InvalidShape(_)
            | Error::InvalidRoi { .. }
            | Error::DegenerateTraining(_)
            | Error::ConfigMismatch(_)
            | Error::UndefinedDistance
            | Error::Annotation { .. }
            | Error::Config(_) => 1,
            Error::Diverged { .. } | Error::Io { .. } | Error::Format(_) => 2,
        }
    }
}

fn fmt_index(index: Option<usize>) -> String {
    match index {
        Some(i) => format!(" #{i}"),
        None => String::new(),
    }
}
