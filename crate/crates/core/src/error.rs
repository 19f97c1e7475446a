use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("text contains no tokens")]
    EmptyText,

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("cannot align span {span:?}: {reason}")]
    AlignmentFailure { span: String, reason: String },

    #[error("cause tokens {cause:?} overlap effect tokens {effect:?}")]
    OverlapViolation {
        cause: (usize, usize),
        effect: (usize, usize),
    },

    #[error("need at least {needed} examples for {needed}-fold split, got {got}")]
    TooFewExamples { needed: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid span ({start}, {end}) for segment of length {n}")]
    InvalidSpan { start: usize, end: usize, n: usize },

    #[error("no precomputed vectors for segment {0:?}")]
    MissingSegment(String),

    #[error("segment {id:?}: vector width {got}, expected {expected}")]
    WidthMismatch { id: String, expected: usize, got: usize },

    #[error("segment {id:?}: {got} vector rows, expected {expected} (sentinel row included)")]
    RowCountMismatch { id: String, expected: usize, got: usize },

    #[error("target position {position} outside the admissible positions of a length-{len} distribution")]
    TargetOutOfRange { position: i64, len: usize },

    #[error("non-finite loss at epoch {epoch}, example {example_id:?}: {loss}")]
    NonFiniteLoss {
        epoch: usize,
        example_id: String,
        loss: f64,
    },

    #[error("no valid (start, end) pair has non-zero probability")]
    NoValidSpan,

    #[error("prediction for unknown segment id {0:?}")]
    UnknownId(String),

    #[error("paired differences have zero variance")]
    DegenerateVariance,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Errors caused by the content of input data (as opposed to numerics or IO).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyText
                | Error::MalformedRow { .. }
                | Error::AlignmentFailure { .. }
                | Error::OverlapViolation { .. }
                | Error::TooFewExamples { .. }
                | Error::InvalidSpan { .. }
                | Error::MissingSegment(_)
                | Error::WidthMismatch { .. }
                | Error::RowCountMismatch { .. }
                | Error::UnknownId(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Checkpoint(_)
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::DegenerateVariance | Error::NoValidSpan
        )
    }
}
