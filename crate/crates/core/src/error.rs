use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("arm index {arm} out of range for {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },

    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    #[error("{what} requires {expected} arms, got {got}")]
    UnsupportedArity {
        what: &'static str,
        expected: &'static str,
        got: usize,
    },

    #[error("degenerate chain: no unique stationary distribution")]
    DegenerateChain,

    #[error("extinct urn")]
    ExtinctUrn,

    #[error("design matrix is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("drop-the-loser draw loop exceeded {0} immigration draws")]
    ImmigrationLoop(u64),

    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("subject {0} is not enrolled")]
    UnknownSubject(u64),

    #[error("outcome for subject {0} already recorded")]
    DuplicateOutcome(u64),

    #[error("event log replay diverged at event {index}: {reason}")]
    ReplayMismatch { index: usize, reason: String },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
