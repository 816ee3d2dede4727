//! Error type shared across the core modules.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by the core numerics.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A dimension argument was zero or otherwise unusable.
    InvalidDimension(String),
    /// A channel matrix was used in the wrong domain (spatial vs angular).
    DomainMismatch { expected: &'static str, got: &'static str },
    /// Tensor or matrix shapes do not line up for the requested operation.
    Shape(String),
    /// A metric is undefined for the given operands (e.g. zero-norm truth).
    UndefinedMetric(&'static str),
    /// A configuration value violates its documented constraints.
    Config(String),
    /// An API contract was violated (empty batch, missing history, ...).
    Contract(&'static str),
    /// An operation received an empty input it cannot reduce.
    EmptyInput(&'static str),
    /// A scalar argument lies outside its mathematical domain.
    OutOfDomain(&'static str),
    /// Scene generation could not satisfy its placement constraints.
    Generation(String),
    /// Training aborted because the loss became non-finite.
    Diverged { epoch: usize, cfm: f64, contrastive: f64, kl: f64 },
    /// Checkpoint contents do not match the model that tries to load them.
    CheckpointMismatch(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDimension(msg) => write!(f, "invalid dimension: {msg}"),
            Error::DomainMismatch { expected, got } => {
                write!(f, "channel domain mismatch: expected {expected}, got {got}")
            }
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::UndefinedMetric(msg) => write!(f, "metric undefined: {msg}"),
            Error::Config(msg) => write!(f, "invalid config: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::EmptyInput(msg) => write!(f, "empty input: {msg}"),
            Error::OutOfDomain(msg) => write!(f, "out of domain: {msg}"),
            Error::Generation(msg) => write!(f, "scene generation failed: {msg}"),
            Error::Diverged { epoch, cfm, contrastive, kl } => write!(
                f,
                "training diverged at epoch {epoch} (cfm={cfm}, contrastive={contrastive}, kl={kl})"
            ),
            Error::CheckpointMismatch(msg) => write!(f, "checkpoint mismatch: {msg}"),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
