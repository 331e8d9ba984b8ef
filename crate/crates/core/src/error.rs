use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("lever modulation drives `{field}` to {value}, outside its admissible range")]
    InvalidEffective { field: &'static str, value: f64 },

    #[error("unknown scenario `{name}` (known scenarios: {known})")]
    UnknownScenario { name: String, known: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the caller's inputs rather than the environment.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Write { .. } | Error::Csv(_))
    }
}
