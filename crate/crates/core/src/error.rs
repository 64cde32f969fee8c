use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("{path}:{line}: unknown well id `{well}`")]
    UnknownWell {
        path: PathBuf,
        line: u64,
        well: String,
    },

    #[error("well `{well}`: time {time} does not increase (previous {previous})")]
    NonMonotoneTime {
        well: String,
        time: f64,
        previous: f64,
    },

    #[error("well `{well}`: duplicate timestamp {time}")]
    DuplicateTimestamp { well: String, time: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing response for active pair ({row}, {col})")]
    MissingUtr { row: String, col: String },

    #[error("query time {0} is before t = 0")]
    NegativeTime(f64),

    #[error("pressure control infeasible at t = {time}: {reason}")]
    PressureControlInfeasible { time: f64, reason: String },

    #[error("empty {0} partition")]
    EmptyPartition(&'static str),

    #[error("no pressure data to fit")]
    EmptyPressureData,

    #[error("optimizer budget is zero")]
    ZeroBudget,

    #[error("strict allocation infeasible: {0}")]
    InfeasibleAllocation(String),

    #[error("degenerate folds: {0}")]
    DegenerateFolds(String),

    #[error("overlapping well coordinates: `{0}` and `{1}`")]
    OverlappingWells(String, String),

    #[error("{0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
