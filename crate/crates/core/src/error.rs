use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    NonFinite(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("registry error: unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("lookup error: index {index} out of range for size {size}")]
    Lookup { index: usize, size: usize },
    #[error("degenerate embedding: row `{0}` has zero norm")]
    DegenerateEmbedding(String),
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("data integrity error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
