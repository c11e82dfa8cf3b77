use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("invalid camera pose: {0}")]
    InvalidPose(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("corrupt bitstream header: {0}")]
    CorruptHeader(String),

    #[error("malformed bit data: {0}")]
    Malformed(String),

    #[error("malformed image file: {0}")]
    Pnm(String),

    #[error("background provider failed: {0}")]
    Provider(String),

    #[error("missing condition coverage: {0}")]
    MissingCondition(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(a: (u32, u32), b: (u32, u32)) -> Self {
        Error::DimensionMismatch {
            left_w: a.0,
            left_h: a.1,
            right_w: b.0,
            right_h: b.1,
        }
    }
}
