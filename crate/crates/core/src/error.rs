use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("row {row} has no admissible key")]
    DegenerateRow { row: usize },

    #[error("observation window of {last_q} rows exceeds sequence length {seq_len}")]
    Window { last_q: usize, seq_len: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("scores are all zero")]
    DegenerateScores,

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("plan mismatch: {0}")]
    Plan(String),

    #[error("mean of workload values is zero")]
    ZeroMean,

    #[error("incomplete step logs: {0}")]
    IncompleteLogs(String),
}

pub type Result<T> = std::result::Result<T, Error>;
