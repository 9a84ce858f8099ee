use std::fmt;

use crate::kernel::ExpKernel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input outside the mathematical domain of a function (e.g. the power
    /// kernel at zero).
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced non-finite values or would be unstable.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("call price {price} violates the {bound} no-arbitrage bound ({limit})")]
    PriceOutOfBounds {
        price: f64,
        bound: PriceBound,
        limit: f64,
    },

    #[error(
        "least-squares kernel fit did not converge after {} iterations (rmse {:.3e})",
        .0.iterations, .0.rmse
    )]
    FitFailure(Box<FitFailure>),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Which side of the call-price interval `[max(S0 - K, 0), S0]` was violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceBound {
    Lower,
    Upper,
}

impl fmt::Display for PriceBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriceBound::Lower => f.write_str("lower"),
            PriceBound::Upper => f.write_str("upper"),
        }
    }
}

/// Best iterate of a fit that ran out of iterations.
#[derive(Debug, Clone)]
pub struct FitFailure {
    pub best: ExpKernel,
    pub rmse: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}
