use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("no smoothing parameter produced a usable cross-validation score")]
    NoUsableLambda,

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SvError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SvError::InvalidArgument(msg.into())
    }

    /// Short machine-readable tag, used in the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            SvError::InvalidArgument(_) => "invalid_argument",
            SvError::Data(_) => "data",
            SvError::NoUsableLambda => "no_usable_lambda",
            SvError::Usage(_) => "usage",
            SvError::Io(_) => "io",
            SvError::Json(_) => "json",
            SvError::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, SvError>;
