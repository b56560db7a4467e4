//! CLI error carrying its exit code.
//!
//! 0 success, 2 configuration error (bad flags, unreadable or corrupt model
//! files), 3 data error (manifest or image problems), 4 internal.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config,
    Data,
    Internal,
}

impl ExitKind {
    pub fn code(&self) -> i32 {
        match self {
            ExitKind::Config => 2,
            ExitKind::Data => 3,
            ExitKind::Internal => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_error(message: impl Into<String>) -> CliError {
    CliError { kind: ExitKind::Config, message: message.into() }
}

pub fn data_error(message: impl Into<String>) -> CliError {
    CliError { kind: ExitKind::Data, message: message.into() }
}

pub fn internal_error(message: impl Into<String>) -> CliError {
    CliError { kind: ExitKind::Internal, message: message.into() }
}

/// Context helpers so call sites pick the exit class.
pub trait ErrorContext<T> {
    fn or_config(self, what: &str) -> CliResult<T>;
    fn or_data(self, what: &str) -> CliResult<T>;
    fn or_internal(self, what: &str) -> CliResult<T>;
}

impl<T, E: fmt::Display> ErrorContext<T> for Result<T, E> {
    fn or_config(self, what: &str) -> CliResult<T> {
        self.map_err(|e| config_error(format!("{what}: {e}")))
    }

    fn or_data(self, what: &str) -> CliResult<T> {
        self.map_err(|e| data_error(format!("{what}: {e}")))
    }

    fn or_internal(self, what: &str) -> CliResult<T> {
        self.map_err(|e| internal_error(format!("{what}: {e}")))
    }
}
