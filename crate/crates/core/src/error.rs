use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node count {p} outside supported range 1..={max}")]
    NodeCount { p: usize, max: usize },

    #[error("node index {node} out of range for p = {p}")]
    NodeIndex { node: usize, p: usize },

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("graph contains a directed cycle")]
    Cycle,

    #[error("graphs have different node counts ({0} vs {1})")]
    Mismatch(usize, usize),

    #[error("coefficient supplied for non-edge {from}->{to}")]
    NonEdgeCoefficient { from: usize, to: usize },

    #[error("missing coefficient for edge {from}->{to}")]
    MissingCoefficient { from: usize, to: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("moment undefined: {0}")]
    UndefinedMoment(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dag not present in table: {0}")]
    MissingDag(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("orientation conflict at edge {from}->{to}: {reason}")]
    OrientationConflict {
        from: usize,
        to: usize,
        reason: &'static str,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
