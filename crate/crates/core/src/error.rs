use thiserror::Error;

/// Errors raised anywhere in the forecasting pipeline.
#[derive(Error, Debug)]
pub enum EchoError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate matrix: {0}")]
    Degenerate(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("load error at row {row}, column {col}: {msg}")]
    Load { row: usize, col: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EchoError>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(EchoError::Shape {
            context,
            expected,
            actual,
        })
    }
}
