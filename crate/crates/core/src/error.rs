use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a finite number")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::InvalidArgument(_) => 2,
            Error::Io { .. }
            | Error::HeaderMismatch { .. }
            | Error::BadCell { .. }
            | Error::RaggedRow { .. }
            | Error::DimensionMismatch { .. }
            | Error::Contract(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}
