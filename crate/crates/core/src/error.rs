use thiserror::Error;

use crate::optimizer::Trace;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// s < d: the energies handled here are hypersingular only.
    #[error("hypersingular constraint violated: s = {s} must be >= d = {d}")]
    NotHypersingular { s: f64, d: usize },

    #[error("no known constant for s = {s}, d = {d}; supply user_override")]
    UnknownConstant { s: f64, d: usize },

    #[error("retraction undefined at {0:?}")]
    RetractionUndefined(Vec<f64>),

    #[error("node budget exceeded: {requested} mesh points requested, budget is {budget}")]
    NodeBudget { requested: u64, budget: u64 },

    #[error("infinite energy: points {0} and {1} coincide")]
    InfiniteEnergy(usize, usize),

    #[error("failed to bracket the unit-mass level after {0} doublings")]
    BracketFailure(usize),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("all {} restarts failed", .traces.len())]
    AllRestartsFailed { traces: Vec<Trace> },

    #[error("empty filtered mesh: no mesh point satisfies the sublevel condition")]
    EmptySublevel,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
