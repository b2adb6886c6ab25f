use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid query: {0}")]
    Query(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("missing statistic: {0}")]
    MissingStatistic(String),

    #[error("brute-force domain too large: {estimate} candidates exceeds budget {budget}")]
    DomainTooLarge { estimate: u128, budget: u128 },

    #[error("sketch error: {0}")]
    Sketch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub(crate) fn query(msg: impl Into<String>) -> Self {
        Error::Query(msg.into())
    }
}
