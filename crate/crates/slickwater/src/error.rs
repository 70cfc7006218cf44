//! Error type shared by the IO layer and the CLI, with the process exit-code
//! mapping: 0 success, 2 config error, 3 data error, 4 numeric failure.

use slickwater_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Core(CoreError),
}

impl From<CoreError> for IoError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numeric(msg) => IoError::Numeric(msg.to_string()),
            other => IoError::Core(other),
        }
    }
}

impl From<serde_json::Error> for IoError {
    fn from(e: serde_json::Error) -> Self {
        IoError::Data(e.to_string())
    }
}

impl IoError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            IoError::Config(_) => 2,
            IoError::Numeric(_) => 4,
            IoError::Data(_) | IoError::Io(_) | IoError::Core(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        IoError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        IoError::Data(msg.into())
    }
}

pub type Result<T> = core::result::Result<T, IoError>;
