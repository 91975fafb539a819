use thiserror::Error;

/// Errors raised while building, transforming, or running models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("duplicate sample site `{0}`")]
    DuplicateSite(String),

    #[error("unknown sample site `{0}`")]
    UnknownSite(String),

    #[error("invalid distribution at site `{site}`: {reason}")]
    InvalidDistribution { site: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite evaluation: {0}")]
    NonFiniteEvaluation(String),

    #[error("invalid parameterisation: {0}")]
    InvalidParameterisation(String),

    #[error("optimisation failed: {0}")]
    OptimisationFailed(String),

    #[error("schema error: {0}")]
    SchemaError(String),

    #[error("model structure changed between executions: {0}")]
    StructureMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for failures caused by floating-point blow-ups rather than
    /// malformed programs or inputs. Samplers treat these as rejections.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteEvaluation(_) | Error::InvalidDistribution { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
