use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("profiling error: {0}")]
    Profiling(String),

    #[error("state error: {0}")]
    State(String),

    #[error("system error: {0}")]
    System(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("export error: {0}")]
    Export(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps the error with a short description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by bad input or I/O rather than estimation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self.root(),
            Error::Schema(_)
                | Error::Parse { .. }
                | Error::Argument(_)
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
