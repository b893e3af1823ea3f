use std::path::{Path, PathBuf};

use thiserror::Error;

/// Exit status for bad flags, configs or input contents.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status for I/O and numerical failures.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: tbooster::Error,
    },

    #[error(transparent)]
    Core(#[from] tbooster::Error),
}

impl CliError {
    pub fn file(path: &Path, source: impl Into<tbooster::Error>) -> Self {
        Self::File {
            path: path.to_path_buf(),
            source: source.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config { .. } => EXIT_VALIDATION,
            Self::File { source, .. } | Self::Core(source) => core_exit_code(source),
        }
    }
}

fn core_exit_code(e: &tbooster::Error) -> i32 {
    use tbooster::Error::*;
    match e {
        InvalidArgument(_) | Parse { .. } | MissingFeature { .. } | Shape { .. } | EmptyDataset(_) | Checkpoint(_) => {
            EXIT_VALIDATION
        }
        NonFinite(_) | Degenerate(_) | Io(_) | Json(_) => EXIT_RUNTIME,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
