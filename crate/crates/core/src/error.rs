use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, bounds, arity).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no pairs")]
    NoPairs,

    #[error("gradient blowup in {0}")]
    GradientBlowup(String),

    #[error("no oracle ground truth")]
    NoOracle,

    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("dimension mismatch: {what} is {found} in data but {expected} in config")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
