use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: shapes, grids, missing settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A non-finite value appeared while evaluating a network.
    #[error("numeric error in layer {layer}: {message}")]
    Numeric { layer: usize, message: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// Malformed or inconsistent data.
    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse { row: usize, col: String, message: String },

    #[error("split error: {0}")]
    Split(String),

    /// A metric that is undefined for the given inputs.
    #[error("metric error: {0}")]
    Metric(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical failure (divergence, overflow).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. } | Error::Training { .. })
    }
}
