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

    #[error("embedding index {index} out of range for table with {rows} rows")]
    Lookup { index: usize, rows: usize },

    #[error("non-finite value in {context}")]
    Numeric { context: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("schema mismatch: model expects {expected}, dataset has {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss} (parameter norms: {norms})")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        norms: String,
    },

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension { op, left, right }
    }
}
