use thiserror::Error;

/// Errors raised by library operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("no sweeps to aggregate")]
    EmptySweeps,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid range band [{inner}, {outer})")]
    InvalidBand { inner: f64, outer: f64 },

    #[error("band cover violation: {0}")]
    BandCover(String),

    #[error("degenerate calibration data: {0}")]
    DegenerateFit(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown report format `{0}`")]
    UnknownFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than failures while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::BandCover(_) | Error::InvalidBand { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
