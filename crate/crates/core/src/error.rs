use atdgnn_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: contract violation: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("corrupt container: {0}")]
    Corruption(String),

    #[error("unsupported container version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("numeric check failed: {0}")]
    NumericCheck(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract { op, detail: detail.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Short stable tag used in machine-readable error lines.
    /// Collapses into the tensor crate's error type, for closures that
    /// the tensor crate calls back.
    pub fn into_tensor(self) -> TensorError {
        match self {
            Error::Tensor(e) => e,
            other => TensorError::contract("model", other.to_string()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Contract { .. } => "contract",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::Corruption(_) => "corruption",
            Error::Version { .. } => "version",
            Error::NumericCheck(_) => "numeric",
            Error::Tensor(TensorError::Dimension { .. }) => "dimension",
            Error::Tensor(_) => "contract",
            Error::Io { .. } => "io",
        }
    }
}
