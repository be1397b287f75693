use std::io;

/// Errors raised by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum RcaError {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("input contains no data rows")]
    EmptyInput,
    #[error("degenerate channel `{0}`")]
    DegenerateChannel(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no invariants found: {0}")]
    NoInvariantsFound(String),
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = RcaError> = std::result::Result<T, E>;
