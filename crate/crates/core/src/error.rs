use thiserror::Error;

/// Errors produced by the RTO library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("capability not available: {0}")]
    Capability(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot build a chain from an empty proposal list")]
    EmptyChain,

    #[error("all importance weights are zero")]
    AllWeightsZero,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_finite(context: &'static str, v: &nalgebra::DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}
