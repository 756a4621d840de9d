//! CLI error classes and their exit codes: 2 for model/data problems,
//! 3 when estimation could not produce a usable result.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Ingestion(String),
    Model(vcgate_core::TestError),
    NoResult(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Ingestion(m) => write!(f, "data error: {m}"),
            CliError::Model(e) => write!(f, "model error: {e}"),
            CliError::NoResult(m) => write!(f, "estimation failed: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Ingestion(_) | CliError::Model(_) | CliError::Io(_) => 2,
            CliError::NoResult(_) => 3,
        }
    }
}

impl From<vcgate_core::TestError> for CliError {
    fn from(e: vcgate_core::TestError) -> Self {
        CliError::Model(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
