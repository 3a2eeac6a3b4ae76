use thiserror::Error;

use crate::skin_tone::SkinTone;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("singular fit: design matrix is rank deficient (condition {0:e})")]
    SingularFit(f64),

    #[error("degenerate light: DC term {0:e} is too close to zero")]
    DegenerateLight(f64),

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("group `{group}` has {count} items, at least {required} required")]
    InsufficientGroup {
        group: String,
        count: usize,
        required: usize,
    },

    #[error("no items of class `{0}`")]
    MissingClass(SkinTone),

    #[error("unknown skin tone class `{0}`")]
    UnknownClass(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("score vector is all zero")]
    ZeroVector,

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
