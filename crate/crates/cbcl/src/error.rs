use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatIssue {
    MalformedHeader(String),
    UnsupportedVersion(u8),
    Truncated,
    TrailingBytes,
    NonFinite,
    UnknownLabel(u32),
    DimensionMismatch { expected: usize, found: usize },
    Invalid(String),
}

impl fmt::Display for FormatIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MalformedHeader(detail) => write!(f, "malformed header ({detail})"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported format version {v}"),
            Self::Truncated => f.write_str("truncated record"),
            Self::TrailingBytes => f.write_str("trailing bytes after last record"),
            Self::NonFinite => f.write_str("non-finite value"),
            Self::UnknownLabel(id) => write!(f, "unknown label id {id}"),
            Self::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Self::Invalid(msg) => f.write_str(msg),
        }
    }
}

/// Where in a file a problem was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Byte(u64),
    Line(u64),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Byte(b) => write!(f, "byte offset {b}"),
            Self::Line(l) => write!(f, "line {l}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {issue} at {location}", path.display())]
    Format { path: PathBuf, location: Location, issue: FormatIssue },
    #[error(transparent)]
    Core(#[from] cbcl_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, location: Location, issue: FormatIssue) -> Self {
        Self::Format { path: path.into(), location, issue }
    }

    /// Process exit status: 1 usage, 2 bad data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Io { .. } | Self::Format { .. } | Self::Core(_) => 2,
            Self::Internal(_) => 3,
        }
    }
}
