use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Structural problems in a binary file.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("truncated: need {needed} bytes, have {len}")]
    Truncated { needed: usize, len: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("unsupported format version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("unsupported dtype code {0}")]
    Dtype(u8),
    #[error("{0}")]
    Layout(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file}: at {at}: {msg}")]
    Schema { file: String, at: String, msg: String },
    #[error("{file}: {source}")]
    Format {
        file: String,
        #[source]
        source: FormatError,
    },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error(transparent)]
    Core(#[from] film_hred_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("unknown video id {id}; available: {}", available.join(", "))]
    UnknownVideo { id: String, available: Vec<String> },
    #[error("no {modality} features for {video_id} at {}", path.display())]
    MissingFeatures { modality: &'static str, video_id: String, path: PathBuf },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("segment ids differ between files; {}", .0.join("; "))]
    IdMismatch(Vec<String>),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(file: impl Into<String>, source: FormatError) -> Self {
        Error::Format { file: file.into(), source }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Core(e) if e.is_numeric() => 3,
            Error::Core(film_hred_core::Error::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }

    /// The structural format error, if this is one.
    pub fn format_kind(&self) -> Option<&FormatError> {
        match self {
            Error::Format { source, .. } => Some(source),
            _ => None,
        }
    }
}
