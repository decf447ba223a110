//! Errors of the file layer and the command line, with process exit codes.

use std::path::PathBuf;

use burstpar_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error("manifest check failed: {0}")]
    Manifest(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const INFEASIBLE: i32 = 4;
    pub const UNSUPPORTED_TOPOLOGY: i32 = 5;
    pub const DEADLOCK: i32 = 6;
    pub const MANIFEST: i32 = 7;
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Parse { path: path.into(), message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => exit::IO,
            CliError::Parse { .. } => exit::PARSE,
            CliError::Usage(_) => exit::USAGE,
            CliError::Manifest(_) => exit::MANIFEST,
            CliError::Core(e) => match e {
                CoreError::InvalidGraph(_)
                | CoreError::MissingLayer(_)
                | CoreError::DuplicateLayer(_)
                | CoreError::Cycle(_)
                | CoreError::MissingProfile { .. }
                | CoreError::NonPositiveTime { .. }
                | CoreError::InvalidCurve(_) => exit::PARSE,
                CoreError::UnsupportedTopology { .. } => exit::UNSUPPORTED_TOPOLOGY,
                CoreError::Infeasible(_) | CoreError::TooLarge(_) => exit::INFEASIBLE,
                CoreError::Deadlock { .. } => exit::DEADLOCK,
                CoreError::InvalidParameter(_) => exit::USAGE,
            },
        }
    }
}
