use std::fmt;

use ikmr_core::Error;

/// Process exit status of a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags, malformed or inconsistent input files.
    Validation = 1,
    /// Anything that went wrong after the inputs were accepted.
    Runtime = 2,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { kind: Kind::Validation, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { kind: Kind::Runtime, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Tags errors raised while loading or checking inputs.
pub trait Invalid<T> {
    fn invalid(self) -> CliResult<T>;
    fn invalid_ctx(self, ctx: &str) -> CliResult<T>;
}

/// Tags errors raised while doing the actual work.
pub trait Failed<T> {
    fn failed(self) -> CliResult<T>;
}

impl<T> Invalid<T> for Result<T, Error> {
    fn invalid(self) -> CliResult<T> {
        self.map_err(|e| Failure::validation(e.to_string()))
    }
    fn invalid_ctx(self, ctx: &str) -> CliResult<T> {
        self.map_err(|e| Failure::validation(format!("{ctx}: {e}")))
    }
}

impl<T> Failed<T> for Result<T, Error> {
    fn failed(self) -> CliResult<T> {
        self.map_err(|e| Failure::runtime(e.to_string()))
    }
}

impl<T> Failed<T> for std::io::Result<T> {
    fn failed(self) -> CliResult<T> {
        self.map_err(|e| Failure::runtime(e.to_string()))
    }
}
