use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("sample index {index} out of range for {n_samples} samples")]
    SampleOutOfRange { index: usize, n_samples: usize },

    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            field,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
