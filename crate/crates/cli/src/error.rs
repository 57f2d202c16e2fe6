use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: osculate::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("computation failed: {0}")]
    Compute(#[from] osculate::Error),
}

impl CliError {
    /// Computation failures are verification failures (1); everything else is
    /// a configuration error (2).
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Compute(_) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
