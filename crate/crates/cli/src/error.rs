use std::fmt;
use std::process::ExitCode;

use fresco_core::Error;

/// Failure classes, each with its own process exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io(String),
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Self::Usage(_) => 2,
            Self::Config(_) => 3,
            Self::Io(_) => 4,
            Self::Compute(_) => 5,
        })
    }

    /// Prefixes the message with the pipeline stage that failed.
    pub fn in_stage(self, stage: &str) -> Self {
        let tag = |m: String| format!("{stage}: {m}");
        match self {
            Self::Usage(m) => Self::Usage(tag(m)),
            Self::Config(m) => Self::Config(tag(m)),
            Self::Io(m) => Self::Io(tag(m)),
            Self::Compute(m) => Self::Compute(tag(m)),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Config(m) | Self::Io(m) | Self::Compute(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Argument(_) => Self::Usage(msg),
            Error::Config(_) => Self::Config(msg),
            Error::Io(_) | Error::Format(_) => Self::Io(msg),
            _ => Self::Compute(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}
