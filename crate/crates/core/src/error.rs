use std::fmt;
use std::path::PathBuf;

/// Why a source item was skipped rather than turned into a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    TooSmall,
    TooShort,
    TooFewFrames,
    NoValidCombination,
    CorruptInput,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::TooSmall => "too_small",
            FilterReason::TooShort => "too_short",
            FilterReason::TooFewFrames => "too_few_frames",
            FilterReason::NoValidCombination => "no_valid_combination",
            FilterReason::CorruptInput => "corrupt_input",
        }
    }
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The source does not qualify for task generation. Pipelines count these
    /// instead of aborting.
    #[error("filtered out ({reason}): {detail}")]
    Filtered { reason: FilterReason, detail: String },

    #[error("corrupt input {path}: {detail}")]
    CorruptInput { path: String, detail: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn filtered(reason: FilterReason, detail: impl Into<String>) -> Self {
        Error::Filtered {
            reason,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Filter reason if this error means "skip the source", `None` for hard errors.
    pub fn filter_reason(&self) -> Option<FilterReason> {
        match self {
            Error::Filtered { reason, .. } => Some(*reason),
            Error::CorruptInput { .. } => Some(FilterReason::CorruptInput),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
