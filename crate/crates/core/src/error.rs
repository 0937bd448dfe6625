use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::llm::LlmError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed URL {url:?}: {reason}")]
    MalformedUrl { url: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("{stage}: {detail}")]
    Stage { stage: String, detail: String },

    #[error("stale checkpoint for stage {stage}: {detail}")]
    StaleCheckpoint { stage: String, detail: String },

    #[error("{stage}: interrupted after {completed} work units")]
    Interrupted { stage: String, completed: usize },

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn stage(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            detail: detail.into(),
        }
    }
}

/// Attaches a path to bare `io::Error`s.
pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
