use std::path::PathBuf;

/// Crate-wide error type. Every fallible operation in this crate returns
/// one of these variants with enough context to diagnose the call site.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes of two operands disagree, or a shape is invalid for the operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An argument is out of its documented domain.
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// An operation that requires at least one element received none.
    #[error("{op} requires a non-empty input")]
    Empty { op: &'static str },

    /// Index past the end of a cache or selection.
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// Underlying I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file exists but does not start with a recognized header.
    #[error("unrecognized format in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// The header parsed but the body contradicts it (truncation, bad values).
    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    /// Semantic validation of loaded data failed (e.g. labels out of range).
    #[error("validation failed: {0}")]
    Validation(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, iteration {iteration}: loss is not finite")]
    Diverged { epoch: usize, iteration: usize },

    /// Engine cache or snapshot is in a state that forbids the request.
    #[error("invalid engine state: {0}")]
    State(String),

    /// Wraps an error from per-head training with the head's identity.
    #[error("head (layer {layer}, head {head}): {source}")]
    Head {
        layer: usize,
        head: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
