use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{what} index {index} out of range (size {size})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("cannot pool over zero rows")]
    EmptyPool,
    #[error("backward already ran on this graph; call reset() before running it again")]
    BackwardTwice,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("non-finite training loss on stream `{stream}`")]
    NonFiniteLoss { stream: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
