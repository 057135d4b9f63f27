use thiserror::Error;

/// Errors produced by the solvers, kernels and file readers.
#[derive(Debug, Error)]
pub enum Error {
    /// Rejected input: bad shapes, weights, configuration values or labels.
    #[error("invalid input: {0}")]
    Validation(String),

    /// Two arrays that must agree in length do not.
    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A computed quantity became NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A transport prefactor overflowed, which means the potentials are not stabilised.
    #[error("exponent overflow in {0}; potentials are not stabilised")]
    Overflow(&'static str),

    /// The Sinkhorn iterates stopped being finite.
    #[error("potentials became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },

    /// An induced marginal entry underflowed to zero, so the plan row (or column) is empty.
    #[error("induced marginal entry {index} is zero")]
    ZeroMarginal { index: usize },

    /// An HVP workspace was used with measures other than the ones it was built for.
    #[error("HVP workspace is stale: it was built for different measures or potentials")]
    StaleWorkspace,

    /// The dense backend refuses to allocate beyond its byte budget.
    #[error("dense backend needs {required} bytes but the budget is {budget} bytes")]
    MemoryBudget { required: u64, budget: u64 },

    /// An eigen-decomposition did not produce usable values.
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    /// The requested combination of features is not implemented.
    #[error("unsupported: {0}")]
    Unsupported(&'static str),

    /// Malformed point-cloud file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Overflow(_)
                | Error::Diverged { .. }
                | Error::ZeroMarginal { .. }
                | Error::StaleWorkspace
                | Error::MemoryBudget { .. }
                | Error::Eigen(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}
