use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty depth map")]
    EmptyDepthMap,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("overlapping depth windows [{0}, {1}) and [{2}, {3})")]
    OverlappingWindows(f64, f64, f64, f64),
    #[error("unknown operation `{0}`")]
    UnknownOp(String),
    #[error("genotype line {line}: {msg}")]
    GenotypeParse { line: usize, msg: String },
    #[error("non-finite loss {value} ({context})")]
    NonFiniteLoss { value: f64, context: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::EmptyDepthMap
                | Error::InvalidArgument(_)
                | Error::ShapeMismatch(_)
                | Error::OverlappingWindows(..)
                | Error::UnknownOp(_)
                | Error::GenotypeParse { .. }
                | Error::Dataset(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
