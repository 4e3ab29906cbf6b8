use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported sample rate {found} Hz (expected {expected} Hz)")]
    SampleRate { found: u32, expected: u32 },

    #[error("signal too short: {samples} samples, need at least {required}")]
    Length { samples: usize, required: usize },

    #[error("cannot pair spectrograms: {0}")]
    Pairing(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("cannot scale a silent signal")]
    CannotScale,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("codec `{codec}` failed ({status}): {output}")]
    Codec {
        codec: String,
        status: String,
        output: String,
    },

    #[error("labeling failed for {deg}: {reason}")]
    Labeling { deg: PathBuf, reason: String },

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.into(),
        }
    }

    /// True when the error stems from a missing input file.
    pub fn is_not_found(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Wav {
                source: hound::Error::IoError(e),
                ..
            } => e.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
