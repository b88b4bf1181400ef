//! Error type shared across the core crate.

use alloc::string::String;
use core::fmt;

/// Everything that can go wrong inside the core: shape arithmetic, contract
/// violations on the tape, configuration mistakes, and degenerate numerics.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that were required to agree did not. Carries both sides
    /// plus the operation name so the message is actionable.
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    /// An output dimension came out non-positive or fractional
    /// (e.g. stride does not divide the padded extent).
    BadDim { op: &'static str, detail: String },
    /// Numerically invalid input where the math has no answer
    /// (zero-norm row fed to l2_normalize, empty tensor, ...).
    Degenerate { op: &'static str, detail: String },
    /// `backward` called on a non-scalar value.
    NonScalarLoss { numel: usize },
    /// `backward` called twice on the same tape.
    BackwardTwice,
    /// A trainable parameter reached the optimizer without a gradient.
    MissingGradient { name: String },
    /// Invalid configuration value.
    Config { detail: String },
    /// Two parameter sets that must mirror each other differ.
    NameSetMismatch { detail: String },
    /// A value that must be finite is NaN or infinite.
    NonFinite { context: String },
    /// Malformed external data (e.g. truncated CIFAR record stream).
    Parse { detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, expected, got } => {
                write!(f, "{op}: shape mismatch, expected {expected}, got {got}")
            }
            Error::BadDim { op, detail } => write!(f, "{op}: bad dimension: {detail}"),
            Error::Degenerate { op, detail } => write!(f, "{op}: degenerate input: {detail}"),
            Error::NonScalarLoss { numel } => {
                write!(f, "backward requires a scalar loss, got {numel} elements")
            }
            Error::BackwardTwice => write!(f, "backward called twice on the same tape"),
            Error::MissingGradient { name } => {
                write!(f, "trainable parameter `{name}` has no gradient")
            }
            Error::Config { detail } => write!(f, "invalid config: {detail}"),
            Error::NameSetMismatch { detail } => {
                write!(f, "parameter name sets differ: {detail}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::Parse { detail } => write!(f, "parse error: {detail}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
