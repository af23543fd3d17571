use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Format(String),
    #[error("mismatched or missing tensors: {}", .0.join(", "))]
    Compatibility(Vec<String>),
    #[error("non-finite value in tensor '{tensor}' at flat index {index}")]
    Numerics { tensor: String, index: usize },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    Overflow(String),
    #[error("{0}")]
    Evaluation(String),
    #[error("all {0} trials failed")]
    SearchFailed(usize),
}

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Short machine-readable kind used in single-line error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "FormatError",
            Error::Compatibility(_) => "CompatibilityError",
            Error::Numerics { .. } => "NumericsError",
            Error::Config(_) => "ConfigError",
            Error::Degenerate(_) => "DegenerateInput",
            Error::Overflow(_) => "OverflowError",
            Error::Evaluation(_) => "EvaluatorError",
            Error::SearchFailed(_) => "SearchFailed",
        }
    }
}
