use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line-oriented input could not be parsed. `line` is 1-based.
    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("invalid triple: {0}")]
    InvalidTriple(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("inputs are not aligned; missing keys: {}", .missing.join(", "))]
    Misaligned { missing: Vec<String> },

    /// A similarity provider failed while scoring one cascade candidate.
    #[error("provider failed on candidate {index} ({text:?}): {source}")]
    Provider {
        index: usize,
        text: String,
        #[source]
        source: ProviderError,
    },

    #[error(transparent)]
    ProviderSetup(#[from] ProviderError),
}

impl Error {
    pub(crate) fn parse(origin: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            origin: origin.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the pipeline itself (provider, network) rather
    /// than of the user's inputs. The CLI maps these to exit code 2.
    pub fn is_pipeline_failure(&self) -> bool {
        matches!(self, Error::Provider { .. } | Error::ProviderSetup(_))
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("vector file {path}:{line}: {message}")]
    VectorFile {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Other(String),
}
