use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("input error: {0}")]
    Input(String),

    #[error("unknown label '{token}' at row {row}")]
    UnknownLabel { row: usize, token: String },

    #[error("cannot score an empty sample set")]
    Empty,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;
