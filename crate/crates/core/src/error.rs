use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid action `{action}` (allowed: {allowed})")]
    InvalidAction { action: String, allowed: String },

    #[error("episode already finished at tick {tick}")]
    EpisodeFinished { tick: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in layer {layer}")]
    Numeric { layer: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name, used for CLI exit codes and log lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InvalidAction { .. } | Error::EpisodeFinished { .. } => "environment",
            Error::Shape(_) | Error::Numeric { .. } => "numeric",
            Error::Checkpoint(_) => "checkpoint",
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => "parse",
            Error::Io { .. } => "io",
        }
    }
}
