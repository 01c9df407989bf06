use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("item {item} is not in the catalog of {catalog} items")]
    Lookup { item: usize, catalog: usize },
    #[error("numeric abort: {message}")]
    NumericAbort { message: String, diagnostics: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
