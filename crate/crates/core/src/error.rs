//! Crate-wide error type.

/// Errors produced by network construction, I/O, solvers and the repair loop.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input length does not match what a layer expects.
    #[error("dimension mismatch at layer {layer}: expected length {expected}, got {got}")]
    Dimension {
        layer: usize,
        expected: usize,
        got: usize,
    },

    /// Structural validation failed (dimension chain, empty network, non-finite weights, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A file could not be parsed.
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// The LP solver hit a numerical problem it refuses to hide.
    #[error("linear program error: {0}")]
    Lp(String),

    /// The two networks violate one of the merge preconditions.
    #[error("incompatible networks: {0}")]
    Incompatible(String),

    /// ReLU splitting exceeded the set budget and the box fallback was disabled.
    #[error("over budget at layer {layer}: {live} sets would exceed the maximum of {max_sets}")]
    OverBudget {
        layer: usize,
        live: usize,
        max_sets: usize,
    },

    /// Training produced a non-finite loss or gradient.
    #[error("training aborted at step {iteration}{}: {detail}", layer.map(|l| format!(", layer {l}")).unwrap_or_default())]
    Training {
        iteration: usize,
        layer: Option<usize>,
        detail: String,
    },

    /// An internal consistency check failed; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
