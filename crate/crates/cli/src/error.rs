use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no results found under the given directories")]
    EmptyReport,
    #[error("{0} run(s) failed")]
    RunFailures(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 when some runs failed, 2 for invalid input, 3 for I/O trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::RunFailures(_) => 1,
            CliError::Config(_) | CliError::Manifest { .. } | CliError::EmptyReport => 2,
            CliError::Io { .. } | CliError::Csv(_) => 3,
        }
    }
}
