use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("episode exhausted: step {step} reached horizon {horizon}")]
    EpisodeExhausted { step: usize, horizon: usize },
    #[error("environment misconfigured: {0}")]
    Environment(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Format { path: path.into(), msg: msg.to_string() }
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Contract(_) => 2,
            Error::Data(_) | Error::Environment(_) | Error::Io { .. } | Error::Format { .. } => 3,
            Error::Protocol(_) | Error::EpisodeExhausted { .. } => 4,
            Error::Divergence(_) => 5,
        }
    }
}
