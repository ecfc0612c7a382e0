use std::io;

use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong inside the engine.
///
/// Variants are grouped by who is at fault: the caller's configuration
/// ([`Error::is_usage`]), the input data, or the engine itself
/// ([`Error::is_internal`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: duplicate question id `{id}`")]
    DuplicateQuestion { line: usize, id: String },

    #[error("line {line}: forecast references unknown question `{question_id}`")]
    UnknownQuestionRef { line: usize, question_id: String },

    #[error("line {line}: forecast dated {date} outside the life of question `{question_id}` ({open}..={close})")]
    ForecastOutsideLife {
        line: usize,
        question_id: String,
        date: NaiveDate,
        open: NaiveDate,
        close: NaiveDate,
    },

    #[error("line {line}: prediction {value} outside [0, 1]")]
    PredictionOutOfRange { line: usize, value: f64 },

    #[error("line {line}: question `{id}` {message}")]
    InvalidQuestion {
        line: usize,
        id: String,
        message: String,
    },

    #[error("unknown question `{0}`")]
    UnknownQuestion(String),

    #[error("day {day} outside the life of question `{question_id}` (0..{life})")]
    DayOutOfRange {
        question_id: String,
        day: i64,
        life: u32,
    },

    #[error("empty forecast window")]
    EmptyWindow,

    #[error("cannot fill {requested} non-empty subsets from {available} questions")]
    InsufficientQuestions { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("embedding key `{0}` not found")]
    MissingKey(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("malformed {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error("text has no words or sentences")]
    EmptyText,

    #[error("lexicon `{0}` is empty")]
    EmptyLexicon(String),

    #[error("no trainable instances")]
    NoTrainingInstances,

    #[error("non-finite gradient in tensor `{tensor}` at index {index}")]
    NonFiniteGradient { tensor: &'static str, index: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Errors caused by how the engine was invoked rather than by the data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidConfig(_))
    }

    pub fn is_internal(&self) -> bool {
        matches!(self, Error::NonFiniteGradient { .. })
    }
}
