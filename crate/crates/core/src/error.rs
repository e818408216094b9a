use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("support violation: {0}")]
    Support(String),

    #[error("enumeration of {count} trajectories exceeds cap {cap}; use Monte-Carlo mode")]
    EnumerationTooLarge { count: f64, cap: u64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unexpected end of file")]
    UnexpectedEof,

    #[error("format version mismatch: expected `{expected}`, found `{found}`")]
    Version { expected: String, found: String },

    #[error("mdp hash mismatch: file declares {declared}, mdp has {actual}")]
    HashMismatch { declared: String, actual: String },

    #[error("ratio estimation failed at outer iteration {iteration}: {source}")]
    OuterIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
