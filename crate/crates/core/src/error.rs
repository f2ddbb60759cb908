use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("ingestion error in {path} at line {line}: {msg}")]
    Ingestion {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("launch failure: {0}")]
    LaunchFailure(String),
    #[error("malformed program: {0}")]
    MalformedProgram(String),
    #[error("empty kernel: {0}")]
    EmptyKernel(String),
    #[error("workload mismatch: {0}")]
    WorkloadMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Short stable tag used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::Calibration(_) => "calibration",
            Error::Ingestion { .. } => "ingestion",
            Error::LaunchFailure(_) => "launch_failure",
            Error::MalformedProgram(_) => "malformed_program",
            Error::EmptyKernel(_) => "empty_kernel",
            Error::WorkloadMismatch(_) => "workload_mismatch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Toml(_) => "toml",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
