use std::path::Path;

use ntl_core::data::DataError;
use ntl_core::session::SessionError;
use ntl_service::dataset::DatasetError;

use crate::script::ScriptError;

/// `User` exits with 1, `Internal` with 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::User(format!("{}: {e}", path.display()))
    }

    pub fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::User(format!("cannot write {}: {e}", path.display()))
    }
}

impl From<ScriptError> for CliError {
    fn from(e: ScriptError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Training(_) | SessionError::Explanation(_) | SessionError::Metric(_) => {
                CliError::Internal(e.to_string())
            }
            _ => CliError::User(e.to_string()),
        }
    }
}
