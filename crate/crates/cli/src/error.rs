use std::fmt;
use std::process::ExitCode;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Runtime,
    Usage,
    Validation,
    Protocol,
    Stall,
}

impl Class {
    pub fn code(self) -> u8 {
        match self {
            Class::Runtime => 1,
            Class::Usage => 2,
            Class::Validation => 3,
            Class::Protocol => 4,
            Class::Stall => 5,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: Class,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(class: Class, error: impl Into<anyhow::Error>) -> Self {
        Self {
            class,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::new(Class::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn validation(msg: impl fmt::Display) -> Self {
        Self::new(Class::Validation, anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.class.code())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        Self {
            class: Class::Runtime,
            error,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a class to foreign errors.
pub trait ClassExt<T> {
    fn class(self, class: Class) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ClassExt<T> for Result<T, E> {
    fn class(self, class: Class) -> CliResult<T> {
        self.map_err(|e| CliError::new(class, e))
    }
}
