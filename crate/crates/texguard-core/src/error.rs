//! Error type shared across the core pipeline.

use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// A tensor or image dimension does not satisfy an operation's contract.
    /// Carries a message naming the offending dimension.
    ShapeMismatch(String),
    /// A scalar hyperparameter is outside its valid range.
    InvalidParam(String),
    /// A named weight entry required by a model is absent.
    MissingWeight(String),
    /// Backward was requested from a non-scalar node.
    NonScalarLoss { elements: usize },
    /// A layer name passed to Grad-CAM does not exist in the model.
    UnknownLayer(String),
    /// A NaN or infinity appeared where the contract requires finite values.
    NonFinite(String),
    /// An operation requires a nonempty input collection.
    EmptyInput(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            CoreError::InvalidParam(m) => write!(f, "invalid parameter: {m}"),
            CoreError::MissingWeight(m) => write!(f, "missing weight entry: {m}"),
            CoreError::NonScalarLoss { elements } => {
                write!(f, "backward requires a scalar loss, got {elements} elements")
            }
            CoreError::UnknownLayer(m) => write!(f, "unknown layer: {m}"),
            CoreError::NonFinite(m) => write!(f, "non-finite value: {m}"),
            CoreError::EmptyInput(m) => write!(f, "empty input: {m}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
