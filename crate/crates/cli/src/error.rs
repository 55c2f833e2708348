use std::path::PathBuf;

use bilevel_core::{BilevelError, ErrorCategory};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] BilevelError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed trace {}: {detail}", path.display())]
    Trace { path: PathBuf, detail: String },

    /// The certification ran but at least one check failed.
    #[error("certification FAILED: {0}")]
    CertificationFailed(String),

    /// A cell of a multi-cell run failed; the wrapped error decides the exit status.
    #[error("epsilon = {eps:e}, seed = {seed}: {source}")]
    Cell {
        eps: f64,
        seed: u64,
        #[source]
        source: Box<CliError>,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const CONVERGENCE: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const CAPABILITY: i32 = 5;
    pub const INSTRUMENTATION: i32 = 6;
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name printed with the message.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category().as_str(),
            CliError::Config(_) => "config",
            CliError::Io { .. } | CliError::Trace { .. } => "io",
            CliError::CertificationFailed(_) => "failed",
            CliError::Cell { source, .. } => source.category(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.category() {
                ErrorCategory::Config => exit::CONFIG,
                ErrorCategory::Convergence => exit::CONVERGENCE,
                ErrorCategory::Numeric => exit::NUMERIC,
                ErrorCategory::Capability => exit::CAPABILITY,
                ErrorCategory::Instrumentation => exit::INSTRUMENTATION,
            },
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } | CliError::Trace { .. } | CliError::CertificationFailed(_) => exit::FAILED,
            CliError::Cell { source, .. } => source.exit_code(),
        }
    }
}
