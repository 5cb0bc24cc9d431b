use std::path::{Path, PathBuf};

use gyromag::ErrorCategory;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] gyromag::Error),
    #[error(transparent)]
    Log(#[from] gyromag::log::LogError),
    #[error("config: {path}: {message}")]
    Config { path: String, message: String },
    #[error("config: {0}")]
    InvalidConfig(String),
    #[error("missing input: {what} ({path}); {hint}")]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        hint: &'static str,
    },
    #[error("cannot read {path}: {message}")]
    ReadArtifact { path: PathBuf, message: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category().as_str(),
            CliError::Write { .. } => "output",
            _ => ErrorCategory::Input.as_str(),
        }
    }

    /// 2 input, 3 excitation, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "input" => 2,
            "excitation" => 3,
            "divergence" => 4,
            _ => 1,
        }
    }

    pub(crate) fn write(path: &Path, source: std::io::Error) -> Self {
        CliError::Write {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
