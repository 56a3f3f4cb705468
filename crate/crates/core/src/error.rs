use crate::trace::IterationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("multiplier component {index} is negative ({value})")]
    NegativeMultiplier { index: usize, value: f64 },

    #[error("iteration {iteration}: {reason}")]
    Divergence {
        iteration: usize,
        reason: String,
        partial_trace: Vec<IterationTrace>,
    },

    #[error("exact gap oracle unavailable: {0}; use the sampling lower bound")]
    NotAffine(String),

    #[error("KKT enumeration found no valid active set; nearest candidates: {0}")]
    OracleFailed(String),

    #[error("missing Lipschitz information: {0}; supply the step schedule explicitly")]
    MissingHints(String),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}
