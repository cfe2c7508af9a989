use std::path::Path;

use thiserror::Error;

/// Failure classes with fixed process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("runtime: {0}")]
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    /// The message on one line, prefixed with its class.
    pub fn single_line(&self) -> String {
        let text = self.to_string();
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    pub fn path(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("path error: {}: {err}", path.display()))
    }

    pub fn write(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("cannot write {}: {err}", path.display()))
    }
}

impl From<cpg_core::Error> for CliError {
    fn from(e: cpg_core::Error) -> Self {
        use cpg_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => CliError::Usage(msg),
            E::UnknownLanguage(_) | E::Corrupt(_) | E::Version { .. } | E::Data(_) => CliError::Data(msg),
            E::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => CliError::Data(msg),
            _ => CliError::Runtime(msg),
        }
    }
}
