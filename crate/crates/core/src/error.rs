use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset integrity: {0}")]
    Integrity(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite loss at epoch {epoch} (ce={loss_ce}, gl={loss_gl})")]
    NonFinite {
        epoch: usize,
        loss_ce: f64,
        loss_gl: f64,
    },

    #[error("gradient mismatch in block {block}: relative error {rel_err:.3e}")]
    GradientMismatch { block: String, rel_err: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension { op, left, right }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. }
            | Error::Integrity(_)
            | Error::Split(_)
            | Error::UndefinedMetric(_)
            | Error::Io { .. } => 3,
            Error::NonFinite { .. } => 4,
            Error::GradientMismatch { .. } => 5,
            Error::Dimension { .. } | Error::EmptyInput { .. } | Error::Contract(_) => 1,
        }
    }
}
