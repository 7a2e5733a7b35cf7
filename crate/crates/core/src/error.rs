use std::fmt;

use thiserror::Error;

/// Errors produced by the lattice kernels, estimators and front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("access outside the field window: time {time}, site {site}")]
    WindowViolation { time: u32, site: String },

    #[error("resource cap exceeded for {what}: requested {requested}, cap {cap}")]
    Resource {
        what: String,
        requested: u64,
        cap: u64,
    },

    #[error("invalid environment model: {0}")]
    InvalidModel(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: need {needed} usable points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("infeasible block enumeration: R = {radius}, N = {block_len}")]
    InfeasibleBlocks { radius: i64, block_len: usize },

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn precondition(msg: impl fmt::Display) -> Self {
        Error::Precondition(msg.to_string())
    }

    pub fn resource(what: impl fmt::Display, requested: u64, cap: u64) -> Self {
        Error::Resource {
            what: what.to_string(),
            requested,
            cap,
        }
    }

    pub fn config(field: &str, reason: impl fmt::Display) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Resource { .. } => 2,
            _ => 1,
        }
    }
}
