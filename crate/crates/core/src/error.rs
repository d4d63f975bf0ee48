use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum HfmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{stage} diverged at {unit} {index}: {detail}")]
    TrainingFailure {
        stage: &'static str,
        unit: &'static str,
        index: usize,
        detail: String,
    },

    #[error("state diverged: {0}")]
    Diverged(String),

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<HfmError>,
    },
}

pub type Result<T> = std::result::Result<T, HfmError>;

impl HfmError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        HfmError::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        HfmError::Degenerate(msg.into())
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        HfmError::Format {
            offset,
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            HfmError::Config(_) | HfmError::InvalidArgument(_) | HfmError::Degenerate(_) => 1,
            HfmError::TrainingFailure { .. } | HfmError::Diverged(_) => 2,
            HfmError::Format { .. } | HfmError::Io(_) => 3,
            HfmError::Stage { source, .. } => source.exit_code(),
        }
    }

    /// Tag the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ HfmError::Stage { .. } => e,
            e => HfmError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Name of the pipeline stage, if known.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            HfmError::Stage { stage, .. } | HfmError::TrainingFailure { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
