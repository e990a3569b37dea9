use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot ingest {}: {reason}", path.display())]
    Ingest { path: PathBuf, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("non-finite loss {loss} at step {step} (batch hash {batch_hash})")]
    NonFiniteLoss {
        step: u64,
        loss: f64,
        batch_hash: String,
    },

    #[error("degenerate sample, t undefined")]
    DegenerateSample,

    #[error("invalid manifest:\n  {}", .0.join("\n  "))]
    Manifest(Vec<String>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Io { .. } => "io",
            Error::Ingest { .. } => "ingest",
            Error::Parse(_) => "parse",
            Error::RankDeficient(_) => "rank_deficient",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::DegenerateSample => "degenerate_sample",
            Error::Manifest(_) => "manifest",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
