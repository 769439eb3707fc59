use std::io;

use thiserror::Error;

/// Errors produced by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// alpha < beta makes the quadratic program non-convex.
    #[error("regularization weights are non-convex: alpha={alpha} < beta={beta}")]
    NonConvex { alpha: f64, beta: f64 },

    /// Nonpositive curvature met inside conjugate gradients.
    #[error("PCG breakdown at iteration {iteration}: curvature {curvature:e}")]
    PcgBreakdown { iteration: usize, curvature: f64 },

    #[error("interior point iterate lost positivity: {0}")]
    NonPositiveIterate(String),

    #[error("line search failed before the first accepted step")]
    LineSearchFailed,

    #[error("phantom rejected: {0}")]
    InvalidPhantom(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
