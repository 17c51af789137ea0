use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Shapes or configuration constants are inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called in the wrong order or with out-of-range arguments.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training produced a non-finite loss or gradient.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    /// A checkpoint or dataset file is malformed or fails its checksum.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// A checkpoint digest does not match the expected teacher.
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
