use thiserror::Error;

use crate::finite::FixedPointReport;
use crate::infinite::ShootReport;

#[derive(Debug, Error)]
pub enum MfgError {
    /// A model or solver parameter is outside its admissible domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Infinite-horizon routines need `beta < 1 + rho/delta`.
    #[error("horizon condition violated: beta = {beta} must be < 1 + rho/delta = {limit}")]
    HorizonCondition { beta: f64, limit: f64 },

    /// A function argument (path, grid, density) is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("fixed-point iteration did not converge after {} iterations (last residual {:.3e})",
        .0.iterations, .0.residual_history.last().copied().unwrap_or(f64::NAN))]
    Convergence(Box<FixedPointReport>),

    #[error("shooting failed: {message}")]
    Shooting {
        message: String,
        report: Option<Box<ShootReport>>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MfgError>;
