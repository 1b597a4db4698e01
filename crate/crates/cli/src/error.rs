//! Process-level error type carrying the documented exit code.

use dqn_core::Error as CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitCode {
    /// Invalid or unreadable configuration (schema violation, bad values).
    Config = 3,
    /// File input/output failure.
    Io = 4,
    /// Reservoir decomposition failure.
    Bath = 5,
    /// A requested check failed (schema check, count comparison).
    Check = 6,
    /// Solver or numerical failure (dense, variational, sampling).
    Solver = 7,
}

#[derive(Debug)]
pub struct AppError {
    pub code: ExitCode,
    pub message: String,
}

impl AppError {
    pub fn new(code: ExitCode, message: impl Into<String>) -> AppError {
        AppError { code, message: message.into() }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for AppError {}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> AppError {
        let code = match &e {
            CoreError::Bath(_) | CoreError::Quadrature(_) => ExitCode::Bath,
            _ => ExitCode::Solver,
        };
        AppError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> AppError {
        AppError::new(ExitCode::Io, e.to_string())
    }
}
