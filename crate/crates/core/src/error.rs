use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("row {row} has norm {norm:e}, too small to normalize")]
    ZeroNorm { row: usize, norm: f64 },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("index {index} out of range for {len} locations")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("bad magic at byte offset {offset}: expected \"FMAP\"")]
    BadMagic { offset: usize },

    #[error("unsupported format version {version} at byte offset {offset}")]
    UnsupportedVersion { offset: usize, version: u8 },

    #[error("file truncated at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },

    #[error("dimension overflow at byte offset {offset}: H*W*C does not fit in memory")]
    DimensionOverflow { offset: usize },

    #[error("trailing data at byte offset {offset}")]
    TrailingBytes { offset: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors that come from reading or decoding external data.
    pub fn is_io_or_format(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::UnsupportedVersion { .. }
                | Error::Truncated { .. }
                | Error::DimensionOverflow { .. }
                | Error::TrailingBytes { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Parse(_)
                | Error::Config(_)
        )
    }
}
