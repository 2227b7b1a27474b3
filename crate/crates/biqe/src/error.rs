use std::path::Path;

/// Failure of a command, split by who has to act on it.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input, flags, config or files.
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::User(format!("{}: {err}", path.display()))
    }
}

impl From<biqe_core::Error> for CliError {
    fn from(e: biqe_core::Error) -> Self {
        use biqe_core::Error::*;
        match e {
            NonFinite(_) | ShapeMismatch | LengthMismatch => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::User(format!("json: {e}"))
    }
}
