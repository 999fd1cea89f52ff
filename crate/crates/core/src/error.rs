use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("numeric domain error: {0}")]
    Numeric(String),

    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("no users eligible for evaluation on the {0} split")]
    NoEligibleUsers(&'static str),
}

impl Error {
    /// Short machine-readable category, used in `ERROR[<category>]:` lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::EmptyCorpus => "data",
            Error::Config(_) => "config",
            Error::Shape { .. } => "shape",
            Error::Numeric(_) | Error::NonFiniteGradient(_) | Error::Diverged { .. } => "numeric",
            Error::Checkpoint(_) => "checkpoint",
            Error::NoEligibleUsers(_) => "data",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
