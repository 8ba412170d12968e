use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{method} seed {seed}: non-finite value at step {step} ({detail})")]
    NonFinite {
        method: String,
        seed: u64,
        step: usize,
        detail: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("missing runs: {}", .0.join(", "))]
    MissingRuns(Vec<String>),

    #[error(transparent)]
    Core(#[from] surge_core::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> HarnessError {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    /// 0 success, 1 configuration, 2 numerical failure, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::NonFinite { .. } | HarnessError::Core(surge_core::Error::NonFinite { .. }) => 2,
            HarnessError::Io { .. } | HarnessError::Format { .. } => 3,
            _ => 1,
        }
    }
}
