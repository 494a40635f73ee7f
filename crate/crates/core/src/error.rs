use thiserror::Error;

/// Errors produced anywhere in the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("no start converged after {starts} starts")]
    NonConvergence { starts: usize },

    #[error("fits disagree on number of observations ({0} vs {1})")]
    MismatchedData(usize, usize),

    #[error("no observations at t = {0}")]
    EmptyCell(f64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("session is complete")]
    SessionComplete,

    #[error("stale trial: expected {expected:?}, got {got}")]
    StaleTrial { expected: Option<u64>, got: u64 },

    #[error("unknown interval {0}")]
    UnknownInterval(u32),

    #[error("incomplete: {0}")]
    Incomplete(String),

    #[error("trial cap of {cap} reached on interval {interval} without termination")]
    CapExceeded { interval: u32, cap: usize },

    #[error("response {0} px outside [0, {1}]")]
    OutOfRange(i64, u32),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("corrupt event log: {0}")]
    CorruptEvent(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
