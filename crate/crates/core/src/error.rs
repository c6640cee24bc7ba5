use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-monotone time indices for subject {0}")]
    NonMonotoneTime(u64),

    #[error("non-monotone treatment for subject {0}")]
    NonMonotoneTreatment(u64),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("counterfactual value missing for subject {subject} at grid index {k}")]
    MissingCounterfactual { subject: u64, k: usize },

    #[error("subject {0} has no pre-treatment observation to anchor a forecast")]
    NoForecastAnchor(u64),

    #[error("no untreated transitions available for the VAR design")]
    EmptyDesign,

    #[error("insufficient rows for VAR fit: {rows} rows for {cols} columns")]
    InsufficientRows { rows: usize, cols: usize },

    #[error("rank-deficient VAR design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("singular Gram matrix at interval {k} (risk set {risk_set}, condition estimate {condition:e})")]
    SingularInterval {
        k: usize,
        risk_set: usize,
        condition: f64,
    },

    #[error("singular system in interval solve (condition estimate {0:e})")]
    SingularSystem(f64),

    #[error("thinning bound {bound} below intensity {intensity}")]
    ThinningBound { bound: f64, intensity: f64 },

    #[error("event count exceeded cap {cap} on one interval (intensity {intensity}); check delta parameters")]
    EventCap { cap: u64, intensity: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("estimate has no ATT value at interval {0} where the truth is defined")]
    MissingAtt(usize),

    #[error("{failed} of {reps} replicates failed (limit 5%)")]
    TooManyFailures { failed: usize, reps: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
