use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fedsep_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("clip {clip}: {detail}")]
    Ingest { clip: String, detail: String },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error("{0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable code printed before every CLI error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Core(e) => e.code(),
            Error::Io { .. } => "E_IO",
            Error::Ingest { .. } => "E_INGEST",
            Error::Format { .. } => "E_FORMAT",
            Error::Config(_) => "E_CONFIG",
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, detail: impl Into<String>) -> Error {
        Error::Format { path: path.to_path_buf(), detail: detail.into() }
    }
}
