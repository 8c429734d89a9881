use std::path::PathBuf;

/// Errors produced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid transform: scale must be positive and finite, got {0}")]
    InvalidTransform(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid bounding box: {0}")]
    InvalidBbox(String),

    #[error("object mask is empty inside the bounding box")]
    EmptyObject,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("class table: {0}")]
    ClassTable(String),

    #[error("label {0} is not in the class table and no void channel is designated")]
    Label(u32),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("ingestion failed: {0}")]
    Ingest(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("eval: {0}")]
    Eval(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
