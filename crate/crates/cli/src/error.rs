use std::fmt;
use std::process::ExitCode;

use fdc_core::FdcError;

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: scenario, flags, files. Exit code 2.
    Config(String),
    /// The numerics failed or did not converge. Exit code 3.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Numeric(_) => ExitCode::from(3),
        }
    }

    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<FdcError> for CliError {
    fn from(e: FdcError) -> Self {
        match e {
            FdcError::Config(m) => CliError::Config(m),
            FdcError::Io(io) => CliError::Config(io.to_string()),
            e if e.is_config() => CliError::Config(e.to_string()),
            e => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
