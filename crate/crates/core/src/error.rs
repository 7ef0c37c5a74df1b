use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped by how a caller is expected to react: input problems
/// (validation, schema, referential, format, io) versus numeric trouble
/// (numeric, convergence).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("submodularity violation: pairwise ({i}, {j}) has weight {weight}")]
    Submodularity { i: usize, j: usize, weight: f64 },

    #[error(
        "convergence error: {what} did not reach tolerance after {iterations} iterations (last regret {regret:e})"
    )]
    Convergence {
        what: &'static str,
        iterations: usize,
        regret: f64,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("referential error: {0}")]
    Referential(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Convergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
