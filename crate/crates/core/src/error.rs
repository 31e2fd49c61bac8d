use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("{path}: line {line}: field `{field}`: {message}")]
    Manifest {
        path: String,
        line: u64,
        field: String,
        message: String,
    },

    #[error("no activity evidence: no bounding boxes for site")]
    NoActivityEvidence,

    #[error("empty day: no day-time images for site {site_id} on {date}")]
    EmptyDay { site_id: String, date: String },

    #[error("unprimed site: no background states available")]
    UnprimedSite,

    #[error("duplicate background state for site {site_id} on {date}")]
    DuplicateState { site_id: String, date: String },

    #[error("cannot balance: class {0} has zero examples")]
    CannotBalance(String),

    #[error("unknown image id `{0}`")]
    UnknownImage(String),

    #[error("predictor `{predictor_id}` failed: {cause}")]
    Predictor { predictor_id: String, cause: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("predictor timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the environment (files, codecs, child processes)
    /// rather than of the data being processed.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Image(_) | Error::Timeout(_) => true,
            Error::Csv(e) => e.is_io_error(),
            _ => false,
        }
    }
}
