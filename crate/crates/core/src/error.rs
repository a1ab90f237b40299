use std::path::PathBuf;

use thiserror::Error;

use crate::metrics::PruneReason;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid sweep specification: {0}")]
    InvalidSweep(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("state became non-finite at t = {t} s; retry with a smaller dt")]
    NonFinite { t: f64 },

    #[error("malformed sweep: {0}")]
    MalformedSweep(String),

    #[error("no set event found on the positive forward branch")]
    NoSetEvent,

    #[error("no reset event found on the negative forward branch")]
    NoResetEvent,

    #[error("slope window holds {found} samples, need at least {needed}")]
    DegenerateWindow { found: usize, needed: usize },

    #[error("hysteresis check failed: {0:?}")]
    NoHysteresis(PruneReason),

    #[error("invalid metrics: {0}")]
    InvalidMetrics(String),

    #[error("invalid parameter ranges: {0}")]
    InvalidRanges(String),

    #[error("acceptance ratio {ratio:.4} over {attempts} attempts is below 1%")]
    YieldTooLow { attempts: usize, ratio: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("connector failure: {0}")]
    ConnectorFailure(String),

    #[error("connector response violates schema: {0}")]
    SchemaViolation(String),

    #[error("objective returned a non-finite value at x = {x}")]
    NonFiniteObjective { x: f64 },

    #[error("invalid search bounds: {0}")]
    InvalidBounds(String),

    #[error("initial parameters never produce set and reset events within the sweep")]
    NoSwitching,

    #[error("reference {0} area must be positive")]
    ZeroReferenceArea(&'static str),

    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("rolling window {window} is invalid for {points} points")]
    WindowTooLarge { window: usize, points: usize },

    #[error("ambiguous sweep: {0}")]
    AmbiguousSweep(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "InvalidParams",
            Error::InvalidSweep(_) => "InvalidSweep",
            Error::InvalidTrace(_) => "InvalidTrace",
            Error::NonFinite { .. } => "NonFinite",
            Error::MalformedSweep(_) => "MalformedSweep",
            Error::NoSetEvent => "NoSetEvent",
            Error::NoResetEvent => "NoResetEvent",
            Error::DegenerateWindow { .. } => "DegenerateWindow",
            Error::NoHysteresis(_) => "NoHysteresis",
            Error::InvalidMetrics(_) => "InvalidMetrics",
            Error::InvalidRanges(_) => "InvalidRanges",
            Error::YieldTooLow { .. } => "YieldTooLow",
            Error::EmptyDataset => "EmptyDataset",
            Error::ConnectorFailure(_) => "ConnectorFailure",
            Error::SchemaViolation(_) => "SchemaViolation",
            Error::NonFiniteObjective { .. } => "NonFiniteObjective",
            Error::InvalidBounds(_) => "InvalidBounds",
            Error::NoSwitching => "NoSwitching",
            Error::ZeroReferenceArea(_) => "ZeroReferenceArea",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Stage { source, .. } => source.kind(),
            Error::WindowTooLarge { .. } => "WindowTooLarge",
            Error::AmbiguousSweep(_) => "AmbiguousSweep",
            Error::Parse { .. } => "Parse",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
