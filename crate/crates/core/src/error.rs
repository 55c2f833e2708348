use thiserror::Error;

/// Errors raised by the solvers, suite constructors and diagnostics.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BilevelError {
    /// Malformed input: wrong vector length, empty set, zero batch.
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration: bad penalty parameter, step size, schedule constant.
    #[error("configuration error: {0}")]
    Config(String),

    /// An oracle produced NaN or infinity.
    #[error("numeric error: non-finite {what} at x = {x:?}, y = {y:?}")]
    Numeric { what: String, x: Vec<f64>, y: Vec<f64> },

    /// An iterative solve stopped at its cap before reaching tolerance.
    #[error("convergence error: {context} stopped after {iterations} iterations with residual {residual:e} (target {target:e})")]
    Convergence {
        context: String,
        iterations: usize,
        residual: f64,
        target: f64,
    },

    /// Inner descent left its admissible region, e.g. an unbounded-below penalty.
    #[error("divergence detected in {context} after {steps} steps: {detail}")]
    Divergence {
        context: String,
        steps: usize,
        detail: String,
    },

    /// The problem lacks something the operation needs (Hessians, a PL lower level, an analytic set).
    #[error("capability error: {0}")]
    Capability(String),

    /// The zero-respecting harness saw oracle traffic that did not go through it.
    #[error("instrumentation error: {0}")]
    Instrumentation(String),
}

impl BilevelError {
    /// Coarse category used for reporting and process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            BilevelError::Input(_) | BilevelError::Config(_) => ErrorCategory::Config,
            BilevelError::Convergence { .. } | BilevelError::Divergence { .. } => ErrorCategory::Convergence,
            BilevelError::Numeric { .. } => ErrorCategory::Numeric,
            BilevelError::Capability(_) => ErrorCategory::Capability,
            BilevelError::Instrumentation(_) => ErrorCategory::Instrumentation,
        }
    }

    pub(crate) fn dim(what: &str, expected: usize, got: usize) -> Self {
        BilevelError::Input(format!("{what} has length {got}, expected {expected}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Convergence,
    Numeric,
    Capability,
    Instrumentation,
}

impl ErrorCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Convergence => "convergence",
            ErrorCategory::Numeric => "numeric",
            ErrorCategory::Capability => "capability",
            ErrorCategory::Instrumentation => "instrumentation",
        }
    }
}

pub type Result<T> = std::result::Result<T, BilevelError>;
