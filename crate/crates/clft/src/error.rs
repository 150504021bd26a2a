use std::path::{Path, PathBuf};

/// Errors of the file-format and command layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("usage error: {0}")]
    Usage(String),
    /// A check ran to completion and reported failure.
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] clft_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the failure stems from how the command was invoked.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_) | Error::Core(clft_core::Error::Usage(_)))
    }
}
