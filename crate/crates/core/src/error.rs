use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("node {node} has no neighbors in the patch graph (raise K or drop the node)")]
    IsolatedNode { node: usize },

    #[error("eigensolver did not converge after {iterations} iterations ({converged}/{requested} pairs)")]
    NumericConvergence {
        iterations: usize,
        converged: usize,
        requested: usize,
    },

    #[error("eigenvector {index} has no element above the anchor threshold")]
    DegenerateEigenvector { index: usize },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable taxonomy name, printed by the CLI on stderr.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DegenerateGeometry(_) => "degenerate-geometry",
            Error::IsolatedNode { .. } => "isolated-node",
            Error::NumericConvergence { .. } => "numeric-convergence",
            Error::DegenerateEigenvector { .. } => "degenerate-eigenvector",
            Error::SingularMatrix(_) => "singular-matrix",
            Error::Precondition(_) => "precondition",
            Error::Parse { .. } => "parse",
            Error::Checkpoint(_) => "checkpoint",
            Error::Diverged(_) => "diverged",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
