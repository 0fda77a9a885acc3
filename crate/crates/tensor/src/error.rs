use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("configuration error in {op}: {detail}")]
    Config { op: &'static str, detail: String },
    #[error("lookup error: index {index} out of range for table with {rows} rows")]
    Lookup { index: usize, rows: usize },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn config(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Config { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
