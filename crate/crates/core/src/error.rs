use thiserror::Error;

use crate::model::ProcessorId;
use crate::rules::Rule;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("topology too small: {kind} needs at least {min} processors, got {n}")]
    SizeTooSmall { kind: &'static str, min: usize, n: usize },

    #[error("processor {index} out of range for a system of {n} processors")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("processor {0} is not correct; rules are only evaluated for correct processors")]
    RoleMismatch(ProcessorId),

    #[error("guard of {rule} does not hold at processor {processor}")]
    GuardViolation { processor: ProcessorId, rule: Rule },

    #[error("clock arithmetic overflow at processor {0}")]
    Overflow(ProcessorId),

    #[error("deadlock at step {step}: no enabled rule and no faulty action")]
    Deadlock { step: u64 },

    #[error("script violation at step {step}: {reason}")]
    ScriptViolation { step: u64, reason: String },

    #[error("trace step {0} is missing its enabled sets")]
    TraceMissingEnabledSets(u64),

    #[error("no cycle detected within {horizon} steps")]
    NoCycleDetected { horizon: usize },

    #[error("{faulty} faulty processors configured; at most one is allowed without the unchecked flag")]
    TooManyFaults { faulty: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
