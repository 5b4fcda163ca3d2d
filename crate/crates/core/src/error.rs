use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ingestion error in {file}: {message}")]
    Ingest { file: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("privacy spec error: {0}")]
    Privacy(String),
    #[error("privacy budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("degenerate neighborhood for node {0}")]
    DegenerateNeighborhood(usize),
    #[error("degenerate task: {0}")]
    DegenerateTask(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit status: 2 configuration, 3 runtime/numeric, 4 budget abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::BudgetExceeded(_) => 4,
            Error::Config(_) | Error::Privacy(_) | Error::Schema(_) | Error::Io { .. } => 2,
            _ => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Ingest {
            file: "<json>".into(),
            message: e.to_string(),
        }
    }
}
