use std::time::Duration;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit reports.
///
/// The type is `Clone` so a single batch failure can be attached to every
/// fragment that batch was meant to serve; I/O errors are carried as text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("malformed URI: {0}")]
    MalformedUri(String),
    #[error("connect failed: {0}")]
    ConnectFailed(String),
    #[error("no session available within {0:?}")]
    AcquireTimeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status} {reason}")]
    Http { status: u16, reason: String },
    #[error("unexpected response: {0}")]
    UnexpectedResponse(String),

    #[error("empty range set")]
    EmptyRangeSet,
    #[error("invalid byte range: offset {offset}, length {length}")]
    InvalidRange { offset: u64, length: u64 },
    #[error("overlapping or unsorted ranges at index {index}")]
    OverlappingRanges { index: usize },
    #[error("malformed Content-Range: {0:?}")]
    MalformedContentRange(String),
    #[error("malformed multipart/byteranges body: {0}")]
    MalformedMultipart(String),
    #[error("server ignored Range and the full body ({length:?} bytes) exceeds the {limit}-byte fallback limit")]
    FullBodyTooLarge { length: Option<u64>, limit: u64 },
    #[error("range not satisfiable (object size {total:?})")]
    RangeNotSatisfiable { total: Option<u64> },

    #[error("malformed metalink: {0}")]
    MalformedMetalink(String),
    #[error("no replica available")]
    NoReplicaAvailable,
    #[error("all replicas failed: {}", summarize(.0))]
    AllReplicasFailed(Vec<(String, Error)>),
    #[error("object size unknown")]
    SizeUnknown,
    #[error("{algorithm} checksum mismatch: expected {expected}, got {actual}")]
    ChecksumMismatch {
        algorithm: String,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration key {key}: {reason}")]
    ConfigInvalid { key: String, reason: String },
    #[error("I/O error: {0}")]
    Io(String),
}

fn summarize(errors: &[(String, Error)]) -> String {
    errors
        .iter()
        .map(|(url, e)| format!("{url}: {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn transport(e: impl std::fmt::Display) -> Self {
        Error::Transport(e.to_string())
    }

    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            Error::Http { status, .. } => Some(*status),
            _ => None,
        }
    }

    /// Whether this error means "the resource is unavailable here" and a
    /// replica should be tried: transport-level failures, 404 and 5xx.
    /// Authorization failures (401/403) are surfaced as-is.
    pub fn is_unavailable(&self) -> bool {
        match self {
            Error::ConnectFailed(_) | Error::Transport(_) | Error::AcquireTimeout(_) => true,
            Error::Http { status, .. } => *status == 404 || (500..600).contains(status),
            Error::AllReplicasFailed(_) => true,
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
