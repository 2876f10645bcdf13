use std::process::ExitCode;

use thiserror::Error;

/// Command failure, classified by exit code: 2 for configuration and usage
/// problems, 3 for unreadable or invalid data, 4 for violated internal
/// invariants.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn to_exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }
}

impl From<relcap::Error> for CliError {
    fn from(e: relcap::Error) -> Self {
        use relcap::Error as E;
        match e {
            E::Config(_) => CliError::Usage(e.to_string()),
            E::Parse { .. } | E::Format(_) | E::Io(_) | E::Json(_) => CliError::Data(e.to_string()),
            E::Dimension { .. } | E::Index { .. } | E::Contract(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
