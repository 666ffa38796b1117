use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands or containers whose shapes break an operation's contract.
    #[error("shape contract violated in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A value outside an operation's mathematical domain.
    #[error("domain error in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },

    /// NaN or infinity detected where only finite values are allowed.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed or inconsistent data (datasets, checkpoints, examples).
    #[error("data error: {0}")]
    Data(String),

    #[error("numerical check failed: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn data(detail: impl Into<String>) -> Self {
        Error::Data(detail.into())
    }

    pub(crate) fn config(detail: impl Into<String>) -> Self {
        Error::Config(detail.into())
    }
}
