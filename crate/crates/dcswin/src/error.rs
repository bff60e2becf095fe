use thiserror::Error;

/// Errors surfaced by the public API.
///
/// Shape violations inside tensor kernels are programmer errors and panic
/// with a descriptive message instead; everything that depends on user
/// input (configs, files, training data, numerics at runtime) comes back
/// through this type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
