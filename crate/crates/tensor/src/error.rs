use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// Shapes that cannot be combined by the operation.
    #[error("{op}: dimension error: {detail}")]
    Dimension { op: &'static str, detail: String },
    /// A precondition on values or call order was violated.
    #[error("{op}: contract violation: {detail}")]
    Contract { op: &'static str, detail: String },
}

impl TensorError {
    pub fn dimension(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Contract {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
