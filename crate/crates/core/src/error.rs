use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// Every variant maps to a distinct process exit code so the CLI can report
/// failures in a machine-readable way (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("numerical integrity error at step {step}, scenario {scenario}: {detail}")]
    Integrity {
        step: usize,
        scenario: usize,
        detail: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("oracle grid error: {0}")]
    Grid(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Model(_) => "model",
            Error::Integrity { .. } => "integrity",
            Error::Data(_) => "data",
            Error::Grid(_) => "grid",
            Error::Parse(_) => "parse",
            Error::Verification(_) => "verification",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Parse(_) => 4,
            Error::Model(_) => 5,
            Error::Integrity { .. } => 6,
            Error::Data(_) => 7,
            Error::Grid(_) => 8,
            Error::Verification(_) => 9,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
