use thiserror::Error;

use crate::Day;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Transport-level failure talking to a chat or encoder backend. Retryable.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// A reply did not match the expected JSON shape. `offset` is the byte
    /// position in the original reply where parsing gave up.
    #[error("schema violation at byte {offset}: {reason}")]
    SchemaViolation { offset: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("exhaustive search limited to {limit}, got {got}")]
    SizeLimitExceeded { limit: usize, got: usize },

    #[error("missing price for {ticker} on {day}")]
    MissingPrice { day: Day, ticker: String },

    #[error("empty universe")]
    EmptyUniverse,

    #[error("regime calendar does not cover {} observed day(s), first {}", .0.len(), .0[0])]
    UncoveredDays(Vec<Day>),

    #[error("empty day range")]
    EmptyRange,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("argument {id}: {source}")]
    Argument {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed on {day}: {source}")]
    Stage {
        day: Day,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn schema(offset: usize, reason: impl Into<String>) -> Self {
        Error::SchemaViolation {
            offset,
            reason: reason.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::BackendUnavailable(_))
    }

    pub fn is_schema_violation(&self) -> bool {
        matches!(self, Error::SchemaViolation { .. })
    }

    pub(crate) fn at_stage(self, day: Day, stage: &'static str) -> Self {
        Error::Stage {
            day,
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn for_argument(self, id: &str) -> Self {
        Error::Argument {
            id: id.to_string(),
            source: Box::new(self),
        }
    }
}
