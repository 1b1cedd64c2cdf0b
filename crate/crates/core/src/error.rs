use std::path::PathBuf;

use thiserror::Error;

use crate::context::SourceId;
use crate::trace::UsageKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: timestamp {ts} for user {user} precedes the previous event")]
    NonMonotonic { line: usize, user: String, ts: u64 },

    #[error("line {line}: prior {kind} usage does not match the user's previous {kind} event")]
    PriorChain { line: usize, kind: UsageKind },

    #[error("no {0} events to build a vocabulary from")]
    EmptyVocabulary(UsageKind),

    #[error("label {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),

    #[error("degenerate value range: all values equal {0} but {1} bins requested")]
    DegenerateRange(f64, usize),

    #[error("{requested} bins requested but only {distinct} distinct values")]
    TooFewDistinct { requested: usize, distinct: usize },

    #[error("empty training set")]
    EmptyTraining,

    #[error("fold {0} of the split is empty")]
    EmptyFold(usize),

    #[error("costly source {0} has zero cost; mark it free instead")]
    ZeroCostCostly(SourceId),

    #[error("posterior table corrupt: outcome {outcome} has zero posterior but positive prior")]
    CorruptTable { outcome: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
