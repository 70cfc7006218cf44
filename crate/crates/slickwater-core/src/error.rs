//! Error type shared by the core algorithms.

use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Dimensions of paired inputs disagree (cube vs mask, vector vs model).
    DimensionMismatch(String),
    /// Input violates a precondition (empty set, bad fraction, invalid index).
    InvalidInput(String),
    /// A channel has zero variance where positive variance is required.
    ZeroVariance { channel: usize },
    /// Numerical failure (NaN loss, non-finite value where finite required).
    Numeric(String),
    /// AUC requested on a single-class sample.
    SingleClass,
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            CoreError::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            CoreError::ZeroVariance { channel } => {
                write!(f, "zero variance in channel {channel}; remove it before scaling")
            }
            CoreError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            CoreError::SingleClass => write!(f, "AUC undefined: only one class present"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
