use thiserror::Error;

/// Errors surfaced by the library. Input errors indicate a caller mistake;
/// the other variants indicate broken internal contracts or failed runs.
#[derive(Debug, Error)]
pub enum CfError {
    #[error("input error: {0}")]
    Input(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("training aborted: {0}")]
    Training(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for CfError {
    fn from(e: serde_json::Error) -> Self {
        CfError::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CfError>;
