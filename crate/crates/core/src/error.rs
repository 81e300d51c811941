use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The request is well-formed but outside the region where the quantity
    /// is defined (e.g. an optimal correlation at SNR >= 1).
    #[error("domain error: {0}")]
    Domain(String),

    /// Perfectly correlated regime (a = 1) where a stabilizing solution does
    /// not exist.
    #[error("singular regime: {0}")]
    SingularRegime(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("root not found: {message}")]
    RootNotFound {
        message: String,
        /// (a, g(a)) samples over the bracket.
        diagnostic: Vec<(f64, f64)>,
    },

    /// An identity that holds by construction was violated; signals a bug.
    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),

    /// Two independent routes to the same quantity disagree.
    #[error("cross-check failed: {0}")]
    CrossCheck(String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Domain(_) => "domain",
            Error::SingularRegime(_) => "singular_regime",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Numeric(_) => "numeric_failure",
            Error::RootNotFound { .. } => "root_not_found",
            Error::InternalConsistency(_) => "internal_consistency",
            Error::CrossCheck(_) => "cross_check",
        }
    }

    /// True for failures of the numerics rather than of the request.
    pub fn is_numeric(&self) -> bool {
        !matches!(
            self,
            Error::InvalidArgument(_) | Error::Domain(_) | Error::SingularRegime(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
