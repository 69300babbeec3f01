use thiserror::Error;

/// Errors produced anywhere in the feature and retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("mesh is not watertight: {inconsistent} of {non_empty} non-empty columns have odd crossing counts")]
    NonWatertight { inconsistent: usize, non_empty: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate normal at keypoint ({0}, {1}, {2})")]
    DegenerateNormal(usize, usize, usize),

    #[error("zero gradient mass in descriptor window at ({0}, {1}, {2})")]
    DegenerateDescriptor(usize, usize, usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing label for model {0}")]
    MissingLabel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category used by the CLI error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "PARSE",
            Error::DegenerateMesh(_) => "DEGENERATE",
            Error::NonWatertight { .. } => "WATERTIGHT",
            Error::InvalidParameter(_) => "PARAM",
            Error::DimensionMismatch(_) => "DIM",
            Error::DegenerateNormal(..) | Error::DegenerateDescriptor(..) => "DEGENERATE",
            Error::Format(_) | Error::Json(_) => "FORMAT",
            Error::MissingLabel(_) => "LABEL",
            Error::Config(_) => "CONFIG",
            Error::Io(_) => "IO",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}
