use std::path::PathBuf;

/// Failure categories, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("degenerate thresholds: c1 = {c1} is not below c2 = {c2}")]
    DegenerateThreshold { c1: f64, c2: f64 },

    #[error("user {user} has no unrated items left at iteration {iteration}")]
    Exhausted { iteration: usize, user: usize },

    #[error("no items left to recommend for user {user}")]
    NoCandidates { user: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate column `{0}`: zero variance")]
    DegenerateColumn(String),

    #[error("singular design; linearly dependent columns: {}", .columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("missing field `{field}` required by {analysis}")]
    MissingField {
        field: &'static str,
        analysis: &'static str,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Toml(_) => ErrorKind::Config,
            Error::Index { .. }
            | Error::EmptyInput(_)
            | Error::DegenerateColumn(_)
            | Error::SingularDesign { .. }
            | Error::InsufficientData(_)
            | Error::Data(_)
            | Error::MissingField { .. }
            | Error::Csv(_) => ErrorKind::Data,
            Error::DegenerateThreshold { .. }
            | Error::Exhausted { .. }
            | Error::NoCandidates { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorKind::Runtime,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
