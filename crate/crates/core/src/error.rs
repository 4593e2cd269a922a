use thiserror::Error;

use crate::editor::EditStepRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown condition `{0}`")]
    UnknownCondition(String),

    #[error("insufficient samples: effective sample size {ess:.1} below {required}")]
    InsufficientSamples { ess: f64, required: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("query outside tabulated domain: {0}")]
    OutOfDomain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("angle undefined: a component has norm below {threshold:e}")]
    UndefinedAngle { threshold: f64 },

    #[error("projection undefined: {0} direction has near-zero norm")]
    UndefinedProjection(&'static str),

    #[error("direction undefined: {0} difference has near-zero norm")]
    UndefinedDirection(&'static str),

    #[error("degenerate triplet {index}: endpoint distance {distance:e}")]
    DegenerateTriplet { index: usize, distance: f64 },

    #[error("field evaluation failed at step {step}: {source}")]
    FieldEvaluation {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// An edit run stopped early. `partial` holds every step completed before the failure.
    #[error("edit run aborted at step {step}: {source}")]
    AbortedRun {
        step: usize,
        partial: Vec<EditStepRecord>,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable class name, used by the CLI error line.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnknownCondition(_) => "unknown_condition",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::Parse { .. } => "parse",
            Error::OutOfDomain(_) => "out_of_domain",
            Error::Numeric(_) => "numeric",
            Error::UndefinedAngle { .. } => "undefined_angle",
            Error::UndefinedProjection(_) => "undefined_projection",
            Error::UndefinedDirection(_) => "undefined_direction",
            Error::DegenerateTriplet { .. } => "degenerate_triplet",
            Error::FieldEvaluation { .. } => "field_evaluation",
            Error::AbortedRun { .. } => "aborted_run",
            Error::Internal(_) => "internal",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
