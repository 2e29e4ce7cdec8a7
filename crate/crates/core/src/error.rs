use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by every kavguard operation.
///
/// The three kinds map one-to-one onto the CLI exit codes (usage 2,
/// format 3, I/O 4).
#[derive(Debug, Error)]
pub enum Error {
    /// The caller asked for something the inputs cannot support.
    #[error("usage error: {0}")]
    Usage(String),
    /// Malformed or inconsistent file contents.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn format_at(offset: u64, msg: impl std::fmt::Display) -> Self {
        Error::Format(format!("{msg} (byte offset {offset})"))
    }

    /// Stable process exit code for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Format(_) => 3,
            Error::Io(_) => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            Error::Io(err.into())
        } else {
            Error::Format(err.to_string())
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line());
        match err.into_kind() {
            csv::ErrorKind::Io(e) => Error::Io(e),
            kind => match line {
                Some(line) => Error::Format(format!("{kind:?} at line {line}")),
                None => Error::Format(format!("{kind:?}")),
            },
        }
    }
}
