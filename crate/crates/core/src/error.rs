//! Error type shared across the pipeline stages.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Volume dimensions of two inputs disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An annotation volume violates the paired pre/post band convention.
    #[error("malformed annotation for synapse {synapse_id}: {reason}")]
    MalformedAnnotation { synapse_id: u32, reason: String },

    /// Scorer training cannot proceed (e.g. a single-class training set).
    #[error("training error: {0}")]
    Training(String),

    /// An external score file does not cover the candidate set exactly once.
    #[error("score ingestion error for candidate {candidate}: {reason}")]
    ScoreIngestion { candidate: u64, reason: String },

    /// Phantom generation could not satisfy the requested configuration.
    #[error("phantom generation error: {0}")]
    Generation(String),

    /// A serialized artifact does not match its documented format.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable kind tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Shape(_) => "shape",
            Error::MalformedAnnotation { .. } => "malformed_annotation",
            Error::Training(_) => "training",
            Error::ScoreIngestion { .. } => "score_ingestion",
            Error::Generation(_) => "generation",
            Error::Format { .. } => "format",
            Error::Evaluation(_) => "evaluation",
            Error::Io(_) => "io",
        }
    }
}
