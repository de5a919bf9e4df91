use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parent array or edge list does not describe a rooted spanning tree.
    #[error("invalid tree structure: {0}")]
    Structure(String),
    /// An argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Matrix or vector shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// The problem has no feasible point (disconnected graph, singular Laplacian, ...).
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// An iterative solver failed to converge or produced non-finite values.
    #[error("solver failure: {0}")]
    Solver(String),
    /// Noiseless topology reconstruction found data no tree can realize.
    #[error("reconstruction failed: {0}")]
    Reconstruction(String),
    /// Values that must be grouped by equality are not cleanly separable.
    #[error("ambiguous level sets: {0}")]
    Quantization(String),
    /// Exhaustive enumeration would exceed its configured budget.
    #[error("enumeration budget of {budget} configurations exceeded; use the projected-gradient path")]
    Budget { budget: usize },
    /// The requested estimator is not defined for this probing layout.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
