use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("degenerate trajectory geometry: {0}")]
    DegenerateTrajectory(String),

    #[error("trace too short: length {len}, need at least {required} (W + H)")]
    TraceTooShort { len: usize, required: usize },

    #[error("empty dataset pool: {0}")]
    EmptyPool(String),

    #[error("degenerate feature `{0}`: zero standard deviation")]
    DegenerateFeature(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("format version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("model has not been trained")]
    Untrained,

    #[error("out-of-order measurement report for {node}: expected step {expected}, got {got}")]
    OutOfOrder { node: String, expected: usize, got: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
