use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model evaluation produced a non-finite value for pair ({bra}, {ket})")]
    Evaluation { bra: usize, ket: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("corrupted partition: {0}")]
    Partition(String),

    #[error(
        "singular linear system (rcond {rcond:.3e}); closest coherent states {} and {} at distance {distance:.3e}",
        pair.0, pair.1
    )]
    Singular {
        rcond: f64,
        pair: (usize, usize),
        distance: f64,
    },

    #[error(
        "step size underflow at t = {time}: h = {step:.3e}, closest pair distance {min_distance:.3e}, last rcond {rcond:.3e}"
    )]
    StepUnderflow {
        time: f64,
        step: f64,
        min_distance: f64,
        rcond: f64,
    },

    #[error("step budget of {0} exhausted")]
    StepBudget(usize),

    #[error("LAPACK failure: {0}")]
    Lapack(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}
