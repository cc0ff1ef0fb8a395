use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("load error in {path}: {msg}")]
    Load { path: String, msg: String },

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("checkpoint error in {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn load(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
