use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, OsmacError>;

#[derive(Debug, Error)]
pub enum OsmacError {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: u64, message: String },

    #[error("schema error at row {row}: {message}")]
    Schema { row: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),

    #[error("negative Hessian is singular; covariates are collinear in the sample")]
    SingularHessian,

    #[error("maximum likelihood estimate does not exist (separated responses)")]
    Separation,

    #[error("both response classes must be present (n0 = {n0}, n1 = {n1})")]
    DegenerateClasses { n0: usize, n1: usize },

    #[error("subsampling probabilities have zero total mass")]
    ZeroMass,

    #[error("M_X is singular")]
    SingularMx,

    #[error("row {index} has zero probability but a nonzero contribution")]
    DivisionByZeroMass { index: usize },

    #[error("plan does not sum to one (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("operation requires a {expected} plan")]
    WrongScheme { expected: &'static str },

    #[error("pilot fit failed: {0}")]
    PilotSeparation(Box<OsmacError>),

    #[error("Poisson acceptance selected no rows")]
    EmptyAcceptance,

    #[error("subsample estimate of M_X is singular")]
    SingularMxHat,

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl OsmacError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OsmacError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that mean "the MLE was not found" on a subsample.
    pub fn is_estimation_failure(&self) -> bool {
        matches!(
            self,
            OsmacError::SingularHessian
                | OsmacError::Separation
                | OsmacError::PilotSeparation(_)
                | OsmacError::EmptyAcceptance
                | OsmacError::SingularMx
                | OsmacError::SingularMxHat
                | OsmacError::ZeroMass
                | OsmacError::DegenerateClasses { .. }
        )
    }
}
