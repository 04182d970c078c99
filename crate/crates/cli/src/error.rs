use std::path::Path;

use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or argument values (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent input data (exit 2).
    #[error("{0}")]
    Data(String),
    /// Non-finite losses or gradient checks over tolerance (exit 3).
    #[error("{0}")]
    Numerical(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<masa_core::Error> for CliError {
    fn from(e: masa_core::Error) -> Self {
        use masa_core::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) => CliError::Usage(msg),
            E::Numerical(_) => CliError::Numerical(msg),
            E::Tensor(inner) => inner.into(),
            _ => CliError::Data(msg),
        }
    }
}

impl From<masa_autograd::Error> for CliError {
    fn from(e: masa_autograd::Error) -> Self {
        use masa_autograd::Error as E;
        let msg = e.to_string();
        match e {
            E::NonFinite { .. } => CliError::Numerical(msg),
            E::InvalidArgument(_) => CliError::Usage(msg),
            _ => CliError::Data(msg),
        }
    }
}
