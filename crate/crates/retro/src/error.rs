//! Error type for the artifact layer: engine errors, IO with the offending
//! path attached, and file-format problems.

use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum Error {
    Core(retro_core::error::Error),
    Io { path: PathBuf, source: std::io::Error },
    Format { detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Core(e) => write!(f, "{e}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Format { detail } => write!(f, "{detail}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<retro_core::error::Error> for Error {
    fn from(e: retro_core::error::Error) -> Self {
        Error::Core(e)
    }
}

/// Wraps an IO error with the path it happened on.
pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

pub fn format_err(detail: impl Into<String>) -> Error {
    Error::Format { detail: detail.into() }
}
