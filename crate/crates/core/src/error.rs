use thiserror::Error;

/// Errors produced by the statistical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Sample covariance is singular or numerically near-singular, so the
    /// standardized scale (and with it the whole SIR machinery) is undefined.
    #[error("singular sample covariance (condition number {condition:.3e})")]
    SingularCovariance { condition: f64 },

    /// All residuals are exactly zero; the variance estimate of the test
    /// statistic degenerates and no standardized statistic exists.
    #[error("degenerate variance estimate: all residuals are zero")]
    DegenerateVariance,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
