use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("inconsistent distances: residual {residual:e} exceeds tolerance {tolerance:e}")]
    InconsistentDistances { residual: f64, tolerance: f64 },

    #[error("anchor alignment residual {residual:e} exceeds tolerance {tolerance:e}")]
    AnchorMismatch { residual: f64, tolerance: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("value {value} is not representable on the codec grid: {reason}")]
    OutOfRange { value: f64, reason: String },

    #[error("malformed interleaved string: {0}")]
    MalformedString(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::DegenerateInput(_) | Error::InconsistentDistances { .. } => 3,
            Error::Io { .. } => 4,
            _ => 1,
        }
    }
}
