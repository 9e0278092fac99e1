use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    ConfigGeneral(String),

    #[error("run diverged: {0}")]
    Divergence(labpal::Error),

    #[error("oracle error: {0}")]
    Oracle(labpal::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit status: 1 config error, 2 divergence, 3 oracle or
    /// internal error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } | HarnessError::ConfigGeneral(_) => 1,
            HarnessError::Divergence(_) => 2,
            HarnessError::Oracle(_) | HarnessError::Io { .. } => 3,
        }
    }
}

impl From<labpal::Error> for HarnessError {
    fn from(err: labpal::Error) -> Self {
        match err {
            labpal::Error::Divergence { .. } => HarnessError::Divergence(err),
            labpal::Error::InvalidConfig(_) => HarnessError::ConfigGeneral(err.to_string()),
            other => HarnessError::Oracle(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
