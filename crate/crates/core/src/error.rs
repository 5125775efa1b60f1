use crate::linalg::LinalgError;

/// Errors raised by the library. The variants group into configuration
/// problems, data problems and numerical failures; see [`Error::class`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at data row {row}, column {column:?}: {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("nothing selected: {0}")]
    EmptySpec(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Schema(_) | Error::Config(_) | Error::Json(_) | Error::Parameter(_) | Error::Type(_) => {
                ErrorClass::Config
            }
            Error::Numeric(_) | Error::Linalg(_) | Error::Rank(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
