use thiserror::Error;

/// Errors produced anywhere in the fusion pipeline.
#[derive(Debug, Error)]
pub enum F3Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("client {client}: expected latent width {expected}, got {found}")]
    ClientShape {
        client: usize,
        expected: usize,
        found: usize,
    },

    #[error("numeric domain violation in {op} at index ({row}, {col}): value {value}")]
    Domain {
        op: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("index {index} out of range (limit {limit}) in {op}")]
    Index {
        op: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("sample {sample} is absent for client {client}")]
    MissingData { client: usize, sample: usize },

    #[error("sample {0} has no present client")]
    DegenerateSample(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed data at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, F3Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(F3Error::Contract(msg.into()))
}
