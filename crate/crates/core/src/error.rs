use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration file contents. Every failure found
    /// during validation is listed.
    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("trace {path}, line {line}: {message}")]
    Trace {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("infeasible control action: {0}")]
    Infeasible(String),

    #[error("queue invariant violated at slot {slot}: {message}")]
    Invariant { slot: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(vec![message.into()])
    }

    /// Errors that stem from user input rather than a failure during a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::ConfigFile { .. } | Error::Trace { .. }
        )
    }
}
