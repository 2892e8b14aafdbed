use std::path::PathBuf;

/// Errors produced by the monitoring pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("no rollouts")]
    NoRollouts,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("duplicate rollout id {0:?}")]
    DuplicateId(String),
    #[error("invalid rollout {id:?}: {msg}")]
    InvalidRollout { id: String, msg: String },
    #[error("insufficient successful ID rollouts: need {needed}, have {available}")]
    InsufficientCalibration { needed: usize, available: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("schema version mismatch in {what}: expected {expected}, found {found}")]
    SchemaVersion {
        what: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Malformed { .. } => "malformed",
            Error::NoRollouts => "no_rollouts",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::DuplicateId(_) => "duplicate_id",
            Error::InvalidRollout { .. } => "invalid_rollout",
            Error::InsufficientCalibration { .. } => "insufficient_calibration",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Empty(_) => "empty",
            Error::SchemaVersion { .. } => "schema_version",
            Error::Serde(_) => "serde",
        }
    }
}
