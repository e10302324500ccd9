use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("non-numeric value, column '{column}', row {row}")]
    NonNumeric { column: String, row: usize },

    #[error("{segment} segment too short: {len} rows, need at least {need}")]
    SegmentTooShort {
        segment: &'static str,
        len: usize,
        need: usize,
    },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("shape mismatch at {stage}: expected {expected}, got {got}")]
    Shape {
        stage: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value at {stage}")]
    NonFinite { stage: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite loss")]
    Diverged { epoch: usize, batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(
        stage: &'static str,
        expected: impl std::fmt::Debug,
        got: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            stage,
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }
}
