use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: line {line}, column {column}: {message}")]
    ConfigParse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Core(#[from] aoi_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {message}")]
    MalformedRow {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{0}: no metrics rows")]
    EmptyInput(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
