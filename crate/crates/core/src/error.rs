use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown strategy {name:?}; valid names: {valid}")]
    UnknownStrategy { name: String, valid: String },

    #[error("unknown criterion {0}")]
    UnknownCriterion(String),

    #[error("{path}: record {index}: {message}")]
    Record {
        path: PathBuf,
        index: usize,
        message: String,
    },

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("degenerate baseline: oracle score {oracle} equals generic score {generic}")]
    DegenerateBaseline { generic: f64, oracle: f64 },

    #[error("user agent failed: {0}")]
    UserAgent(String),

    #[error("model file schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
