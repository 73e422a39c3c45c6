//! Process exit codes and the error type that carries them.

use std::fmt;

use rdsctl::Error;

pub const OK: u8 = 0;
/// `reproduce-paper` ran to completion but at least one check failed.
pub const CHECK_FAILED: u8 = 1;
pub const USAGE: u8 = 2;
pub const INFEASIBLE: u8 = 3;
pub const NUMERICAL: u8 = 4;
pub const DIVERGED: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, message)
    }

    /// Prefixes the message with the pipeline stage that failed.
    pub fn in_stage(self, stage: &str) -> Self {
        Self {
            code: self.code,
            message: format!("stage {stage}: {}", self.message),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Exit code for a library error, decided by its innermost cause.
pub fn code_of(e: &Error) -> u8 {
    match e.root() {
        Error::NotStabilizable { .. } | Error::UnboundedGrowth { .. } | Error::Uncontrollable { .. } => {
            INFEASIBLE
        }
        Error::Solver(_)
        | Error::Unbounded
        | Error::Factorization { .. }
        | Error::SingularInnovation { .. } => NUMERICAL,
        Error::Diverged { .. } => DIVERGED,
        _ => USAGE,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::new(code_of(&e), e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
