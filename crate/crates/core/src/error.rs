use thiserror::Error;

/// Errors raised by the forecasting engine.
///
/// The variants map onto the process exit codes of the command-line tool:
/// [`Error::Data`], [`Error::Parse`] and [`Error::Io`] are data errors,
/// [`Error::Numerical`] is a numerical failure and [`Error::Usage`] is a
/// caller mistake.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Data(_) | Error::MissingColumn(_) => "data",
            Error::Parse { .. } => "parse",
            Error::Numerical(_) => "numerical",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
