use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected input dim {expected}, got {got}")]
    LayerShape {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("batch of {got} samples is too small, need at least {need}")]
    BatchTooSmall { got: usize, need: usize },
    #[error("rotation plane is ambiguous: vectors are antipodal")]
    AmbiguousRotation,
    #[error("blend of rotated feature and anchor has zero norm")]
    DegenerateBlend,
    #[error("missing statistics for layer input {0}")]
    MissingStats(usize),
    #[error("{what} is not supported in {mode} head mode")]
    UnsupportedMode {
        mode: &'static str,
        what: &'static str,
    },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
