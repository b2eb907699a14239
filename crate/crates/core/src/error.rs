use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("theta {theta} outside support [{lo}, {hi}]")]
    OutsideSupport { theta: f64, lo: f64, hi: f64 },

    #[error("operation requires call = 1 (got {0})")]
    RequiresCall(f64),

    #[error("closed-form path requires a symmetric zero-mean uniform support, got [{lo}, {hi}]")]
    UnsupportedDistribution { lo: f64, hi: f64 },

    #[error("state space of {cells} cells exceeds the limit of {limit}")]
    ResourceLimit { cells: u128, limit: u128 },

    #[error("empty evaluation: {0}")]
    EmptyEvaluation(String),

    #[error("inner maximisation mismatch at q_prev={q_prev}, theta={theta}: policy {policy}, grid {grid}")]
    InnerMaxMismatch {
        q_prev: f64,
        theta: f64,
        policy: f64,
        grid: f64,
    },

    #[error("oracle did not converge: {0}")]
    NonConvergence(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ResourceLimit { .. } => 3,
            Error::Verification(_) | Error::NonConvergence(_) | Error::InnerMaxMismatch { .. } => 2,
            _ => 1,
        }
    }
}
