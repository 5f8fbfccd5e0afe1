//! Error types shared across the crate.
//!
//! Errors split into two broad classes that front ends care about:
//! [`Error::is_validation`] covers malformed inputs (bad files, bad flags,
//! impossible configurations), while everything else is a numerical failure
//! encountered on structurally valid data (singular designs, degenerate
//! samples). The CLI maps the former to exit code 2 and the latter to 3.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("panel length T={0} is unsupported; the time-shift design needs T >= 2")]
    UnsupportedPanelLength(usize),

    #[error("unsupported panel shape: T={t} periods with p={p} regressors (need T >= p)")]
    UnsupportedShape { t: usize, p: usize },

    #[error("singular design{}: X'X is rank deficient or condition number exceeds {limit:.0e}",
            .observation.map(|i| format!(" at observation {i}")).unwrap_or_default(),
            limit = crate::matrix::CONDITION_LIMIT)]
    SingularDesign { observation: Option<usize> },

    #[error("too few slow movers for the order-{poly_order} polynomial design \
             (stayers={stayers}, slow movers={slow_movers}, movers={movers})")]
    TooFewSlowMovers {
        poly_order: usize,
        stayers: usize,
        slow_movers: usize,
        movers: usize,
    },

    #[error("collinear time-shift design: the weighted Gram of (X*W)'X*W is singular")]
    CollinearTimeShift,

    #[error("no movers: every observation has |D| <= h")]
    NoMovers,

    #[error("insufficient mover variation: the pooled within-projection Gram is singular")]
    InsufficientMoverVariation,

    #[error("degenerate sample: all within-variation scalars D are identical")]
    DegenerateSample,

    #[error("target period {period} is out of range 1..={t_periods}")]
    InvalidPeriod { period: usize, t_periods: usize },

    #[error("unbalanced panel: id `{id}` does not appear in exactly one row per period")]
    UnbalancedPanel { id: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("serialization refused: {0}")]
    Serialization(String),

    #[error("all {reps} replications failed; first failure: {first_error}")]
    StudyFailed { reps: usize, first_error: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("at stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with a pipeline stage label.
    pub fn stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Attach the originating observation index to a singular-design error.
    pub fn with_observation(self, index: usize) -> Error {
        match self {
            Error::SingularDesign { .. } => Error::SingularDesign {
                observation: Some(index),
            },
            other => other,
        }
    }

    /// True for errors caused by malformed input rather than numerical
    /// degeneracy of valid data.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dimension(_)
            | Error::UnsupportedPanelLength(_)
            | Error::UnsupportedShape { .. }
            | Error::InvalidPeriod { .. }
            | Error::UnbalancedPanel { .. }
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Serialization(_)
            | Error::Io(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
