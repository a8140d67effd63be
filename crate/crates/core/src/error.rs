use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("protocol error: agent `{agent}` product `{product}`: {reason}")]
    Protocol {
        agent: String,
        product: String,
        reason: String,
    },

    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("backward called without a cached forward pass")]
    NoForwardCache,

    #[error("training error: {0}")]
    Training(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("schema error: missing column `{0}`")]
    Schema(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Validation failures map to CLI exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Domain(_) | Error::Schema(_) | Error::Json(_) | Error::InsufficientData(_)
        )
    }
}
