//! Error type shared by the library modules.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A vector that must be nonzero had (numerically) zero norm.
    #[error("zero vector where a nonzero vector is required")]
    ZeroVector,

    /// A vector that must be unit length was not, within tolerance.
    #[error("vector norm {norm} is not 1 within 1e-9")]
    NotUnit { norm: f64 },

    /// Band rejection sampling exceeded its attempt budget.
    #[error("rejection sampling gave up after {attempts} consecutive rejections")]
    RejectionBudgetExceeded { attempts: u64 },

    /// Admissibility checks require dimension at least 4.
    #[error("admissibility checks need dim >= 4, got {dim}")]
    UnsupportedDimension { dim: usize },

    /// An invalid parameter was supplied.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The rescaled hinge loss needs tau > 0.
    #[error("hinge scale tau must be positive, got {tau}")]
    NonpositiveTau { tau: f64 },

    /// An operation requiring a nonempty example set got an empty one.
    #[error("empty example set")]
    EmptySet,

    /// A label was requested for an id that was never drawn.
    #[error("unknown example id {id}")]
    UnknownId { id: usize },

    /// The adversary strategy is incompatible with the configured noise model.
    #[error("strategy {strategy} cannot be used with the {model} noise model")]
    StrategyModelMismatch {
        strategy: &'static str,
        model: &'static str,
    },

    /// A runner was invoked on an oracle configured for the other noise model.
    #[error("runner expects the {expected} noise model, oracle uses {actual}")]
    ModelMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    /// Soft outlier removal hit its iteration cap with the variance
    /// certificate still violated: the instance is infeasible or the budget
    /// was too small.
    #[error(
        "outlier removal stopped after {iterations} iterations with worst \
         variance {worst_value} > cap {cap}"
    )]
    InfeasibleOrBudget {
        iterations: usize,
        worst_value: f64,
        cap: f64,
    },

    /// Weight normalization needs positive total mass.
    #[error("weights sum to zero; cannot normalize")]
    ZeroMass,

    /// Epsilon outside (0, 1/2) or delta outside (0, 1).
    #[error("invalid epsilon/delta: {reason}")]
    InvalidEpsilon { reason: String },

    /// A learning round failed; carries the 1-based round index.
    #[error("round {round} failed: {source}")]
    RoundFailed {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
