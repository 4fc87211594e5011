use std::fmt;

/// Failure classes shared by the CLI and the HTTP API.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or request fields.
    Usage,
    /// Missing or invalid files, out-of-range classes.
    Input,
    /// Unknown sample id.
    NotFound,
    /// The requested computation needs a backend that is not available.
    Unavailable,
    /// A computation failed.
    Compute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppError {
    pub kind: ErrorKind,
    pub message: String,
}

impl AppError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(m: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, m)
    }

    pub fn input(m: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Input, m.to_string())
    }

    pub fn compute(m: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Compute, m.to_string())
    }

    /// 0 success, 1 computation error, 2 usage or input error.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage | ErrorKind::Input | ErrorKind::NotFound | ErrorKind::Unavailable => 2,
            ErrorKind::Compute => 1,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for AppError {}

pub type AppResult<T> = Result<T, AppError>;
