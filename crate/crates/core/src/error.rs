use std::path::PathBuf;

/// Crate-wide error type.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// Tensor shapes do not line up for an operation. `detail` names the
    /// offending dimension.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An argument violated an operation's precondition.
    #[error("{0}")]
    InvalidArgument(String),

    /// A dataset operation could not satisfy its placement/size constraints
    /// for the drawn inputs; the caller should redraw and retry.
    #[error("retry: {0}")]
    Retry(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("manifest {path}: line {line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// True for the retry signal emitted by dataset generators when a drawn
    /// configuration violates a size/placement constraint.
    pub fn is_retry(&self) -> bool {
        matches!(self, Error::Retry(_))
    }
}
