use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = KeplerError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KeplerError {
    #[error("expected {expected} landmarks, got {actual}")]
    LandmarkCount { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid face box: {0}")]
    InvalidBox(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("landmark {0} is not visible in any training face")]
    LandmarkNeverVisible(usize),

    #[error("visible landmark {0} has no ground-truth coordinate")]
    AbsentGroundTruth(usize),

    #[error("transformed face lies entirely outside the image")]
    OutsideImage,

    #[error("input has {actual} channels, expected {expected}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("raster is {actual_w}x{actual_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("invalid network spec: {0}")]
    InvalidNetSpec(String),

    #[error("training diverged at epoch {epoch} (stage {stage})")]
    Divergence { stage: u8, epoch: usize },

    #[error("cascade stage {0} has no trained parameters")]
    MissingStage(u8),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("not enough records: need at least {needed}, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed parameter file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl KeplerError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KeplerError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            KeplerError::InvalidConfig(_) | KeplerError::InvalidNetSpec(_) => 2,
            KeplerError::Divergence { .. } => 4,
            _ => 3,
        }
    }
}
