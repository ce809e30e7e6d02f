//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix norm {norm:.3e} too large for a stable exponential")]
    ExpOverflow { norm: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("state enumeration exceeded the configured cap of {cap} states")]
    StateCapExceeded { cap: usize },

    #[error("outflow rate {value:.3e} is negative beyond rounding; generator is malformed")]
    NegativeOutflow { value: f64 },

    #[error("step size {dt:.3e} fell below the minimum {dt_min:.3e} at t = {t:.6}")]
    StepSizeUnderflow { dt: f64, dt_min: f64, t: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("estimate mode needs a dual trajectory with {needed} storage, found {found}")]
    DualStorageMismatch {
        needed: &'static str,
        found: &'static str,
    },

    #[error("initial vector is not a probability distribution: {reason}")]
    BadInitialVector { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Msg(String),
}
