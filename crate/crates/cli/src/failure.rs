//! Failure classes and their exit codes.

use appf_core::{Error, ErrorKind};

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct Failure {
    pub kind: ErrorKind,
    pub message: String,
}

pub fn config_error(message: impl Into<String>) -> anyhow::Error {
    Failure { kind: ErrorKind::Config, message: message.into() }.into()
}

pub fn io_error(message: impl Into<String>) -> anyhow::Error {
    Failure { kind: ErrorKind::Io, message: message.into() }.into()
}

pub fn numerical_error(message: impl Into<String>) -> anyhow::Error {
    Failure { kind: ErrorKind::Numerical, message: message.into() }.into()
}

/// Lifts a module error into [`appf_core::Error`] so its class survives.
pub trait CoreResult<T> {
    fn core(self) -> anyhow::Result<T>;
}

impl<T, E: Into<Error>> CoreResult<T> for Result<T, E> {
    fn core(self) -> anyhow::Result<T> {
        self.map_err(|e| anyhow::Error::new(e.into()))
    }
}

pub fn kind_of(e: &anyhow::Error) -> ErrorKind {
    for cause in e.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
        if let Some(c) = cause.downcast_ref::<Error>() {
            return c.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ErrorKind::Io;
        }
    }
    ErrorKind::Config
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Numerical => 2,
        ErrorKind::Io => 3,
    }
}
