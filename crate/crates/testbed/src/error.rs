use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum TestbedError {
    #[error("bind failed on {addr}: {source}")]
    BindFailed {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus unreadable: {path}: {source}")]
    CorpusUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid multipart part: {0}")]
    InvalidPart(String),
    #[error("fault plan line {line}: {message}")]
    FaultSyntax { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
