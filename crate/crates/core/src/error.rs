use thiserror::Error;

/// Errors shared across the vocoder pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("autodiff graph already consumed by a backward pass")]
    GraphConsumed,

    #[error("backward requires a scalar loss, got {0} elements")]
    LossNotScalar(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("audio error: {0}")]
    Audio(String),

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedWav(String),

    #[error("malformed WAV file: {0}")]
    MalformedWav(String),

    #[error("container error: {0}")]
    Container(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
