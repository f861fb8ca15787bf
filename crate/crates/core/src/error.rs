//! Crate-wide error type.
//!
//! One enum covers all modules so results compose across the pipeline;
//! variants are grouped by the stage that raises them.

use crate::month::MonthId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ---- panel I/O -----------------------------------------------------
    #[error("malformed header: expected {expected:?}, found {found:?}")]
    MalformedHeader { expected: String, found: String },

    #[error("duplicate record for stock {stock_id:?} at {month}")]
    DuplicateKey { month: MonthId, stock_id: String },

    #[error("panel contains no records")]
    EmptyPanel,

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: u64, reason: String },

    #[error("month {month} outside panel range [{first}, {last}]")]
    MonthOutOfRange {
        month: MonthId,
        first: MonthId,
        last: MonthId,
    },

    #[error("cannot parse {input:?} as a month (expected YYYY-MM)")]
    MonthParse { input: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    // ---- preprocessing -------------------------------------------------
    #[error("empty cross-section: {context}")]
    EmptyCrossSection { context: String },

    #[error("scaled cross-section for {month} not in cache")]
    MissingScaledMonth { month: MonthId },

    #[error(
        "insufficient history: window needs data back to {needed} but panel starts at {available}"
    )]
    InsufficientHistory { needed: MonthId, available: MonthId },

    #[error("training set is empty")]
    EmptyTrainingSet,

    // ---- models --------------------------------------------------------
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),

    #[error("forest fit got no data")]
    EmptyData,

    #[error("svr needs at least 2 examples, got {got}")]
    TooFewExamples { got: usize },

    #[error("non-finite feature value at example {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },

    #[error("model dump rejected: {0}")]
    ModelFormat(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    // ---- pipeline ------------------------------------------------------
    #[error("model fit failed at {month}: {source}")]
    ModelFitFailure {
        month: MonthId,
        #[source]
        source: Box<Error>,
    },

    #[error("score sheets disagree on months: {0}")]
    MonthKeyMismatch(String),

    #[error("ensemble intersection empty at {month}")]
    EmptyIntersection { month: MonthId },

    // ---- metrics & portfolio -------------------------------------------
    #[error("{context}: need at least {needed} stocks, got {got}")]
    TooFewStocks {
        context: String,
        needed: usize,
        got: usize,
    },

    #[error("zero variance in {context}")]
    ZeroVariance { context: String },

    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("hits {hits} exceed trials {total}")]
    InvalidCounts { hits: u64, total: u64 },

    #[error("monthly evaluation list is empty")]
    EmptyEvalList,

    #[error("need at least {needed} monthly returns, got {got}")]
    TooFewMonths { needed: usize, got: usize },

    // ---- synthetic data ------------------------------------------------
    #[error("synthetic panel config too small: {0}")]
    ConfigTooSmall(String),
}

impl Error {
    /// Wraps an I/O error with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
