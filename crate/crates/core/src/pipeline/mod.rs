//! Loading episodes from disk, running the annotators, and writing datasets.

mod export;
mod io;
mod manifest;
mod run;

pub use export::*;
pub use io::*;
pub use manifest::*;
pub use run::*;

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    /// A manifest problem, with the offending field path.
    #[error("{manifest}: {field}: {message}")]
    Manifest {
        manifest: PathBuf,
        field: String,
        message: String,
    },
    #[error("duplicate sample id {0}")]
    DuplicateSample(String),
    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.to_path_buf();
    move |source| PipelineError::Io { path, source }
}

pub(crate) fn format_err(path: &Path, message: impl Into<String>) -> PipelineError {
    PipelineError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}
