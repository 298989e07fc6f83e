use thiserror::Error;

/// Parse failures for the binary spike-tensor format.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpikeFormatError {
    #[error("bad magic {0:02x?}, expected \"FFLY\"")]
    BadMagic([u8; 4]),
    #[error("truncated header: {0} bytes")]
    TruncatedHeader(usize),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing data: expected {expected} payload bytes, found {found}")]
    TrailingData { expected: usize, found: usize },
    #[error("dimensions {t}x{c}x{h}x{w} overflow or are zero")]
    DimOverflow { t: u32, c: u32, h: u32, w: u32 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("quantization error: {0}")]
    Quantization(String),
    #[error("weight stream error: {0}")]
    Stream(String),
    #[error("model file error: {0}")]
    Model(String),
    #[error("spike file error: {0}")]
    SpikeFormat(#[from] SpikeFormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
