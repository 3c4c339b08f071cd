use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{what} must be square, found {rows}x{cols}")]
    NotSquare {
        what: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("{what} contains non-finite entries")]
    NonFinite { what: &'static str },

    #[error("{what} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },

    #[error("{what} is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite {
        what: &'static str,
        min_eigenvalue: f64,
    },

    #[error("{what} is indefinite beyond tolerance (min eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    IndefiniteBeyondTolerance {
        what: &'static str,
        min_eigenvalue: f64,
        tolerance: f64,
    },

    #[error("{what} is singular to working precision (rcond {rcond:e})")]
    SingularMatrix { what: &'static str, rcond: f64 },

    #[error("terminal covariance is singular to working precision (rcond {rcond:e})")]
    SingularTerminalCovariance { rcond: f64 },

    #[error("state transition requested with k = {k} < n = {n}")]
    IndexOrder { k: usize, n: usize },

    #[error("index {index} outside horizon {horizon}")]
    OutOfHorizon { index: usize, horizon: usize },

    #[error("feedback gain violates the causality pattern (max off-pattern entry {max_violation:e})")]
    NonCausal { max_violation: f64 },

    #[error("K/Theta transform is singular (rcond {rcond:e})")]
    SingularTransform { rcond: f64 },

    #[error("reduced Hessian is not positive definite")]
    HessianNotPd,

    #[error("Hessian asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    AsymmetricHessian { asymmetry: f64, tolerance: f64 },

    #[error("squared Wasserstein distance {value:e} is negative beyond round-off")]
    NegativeDistance { value: f64 },

    #[error("at least 2 samples are required, got {samples}")]
    InsufficientSamples { samples: usize },

    #[error("invalid options: {0}")]
    InvalidOptions(&'static str),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context_with<F: FnOnce() -> String>(self, f: F) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context_with<F: FnOnce() -> String>(self, f: F) -> Result<T> {
        self.map_err(|e| e.context(f()))
    }
}
