use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate box [{x0},{y0},{x1},{y1})")]
    DegenerateBox { x0: i32, y0: i32, x1: i32, y1: i32 },

    #[error("box [{x0},{y0},{x1},{y1}) exceeds {width}x{height} frame")]
    BoxOutOfFrame {
        x0: i32,
        y0: i32,
        x1: i32,
        y1: i32,
        width: usize,
        height: usize,
    },

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: String, reason: String },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("proposal file for frame {frame}, line {line}: bad field `{field}`: {reason}")]
    ProposalFormat {
        frame: usize,
        line: usize,
        field: &'static str,
        reason: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint feature dimension mismatch: expected {expected}, found {found}")]
    CheckpointDimension { expected: usize, found: usize },

    #[error("{path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error("missing ground truth for frame {frame}")]
    MissingGroundTruth { frame: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    PngDecode {
        context: String,
        #[source]
        source: png::DecodingError,
    },

    #[error("{context}: {source}")]
    PngEncode {
        context: String,
        #[source]
        source: png::EncodingError,
    },

    #[error("frame {frame}, object {object}: {source}")]
    Frame {
        frame: usize,
        object: u8,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            left_w: left.0,
            left_h: left.1,
            right_w: right.0,
            right_h: right.1,
        }
    }
}
