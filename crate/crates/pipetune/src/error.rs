//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulator, environment, agent, and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A spec (pipeline/machine/workload) failed validation.
    #[error("invalid {what}: {message}")]
    InvalidSpec { what: &'static str, message: String },

    /// An allocation violates the pipeline or machine constraints.
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    /// A budget is too small to hold the required minimum per knob.
    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),

    /// Vector or network dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A joint action index is outside [0, 5^r).
    #[error("action index {index} out of range for {knobs} knobs (space size {space})")]
    ActionOutOfRange {
        index: u64,
        knobs: usize,
        space: u64,
    },

    /// The brute-force search space exceeds the guard.
    #[error(
        "allocation search space {size} exceeds guard {guard}; \
         use the greedy-true oracle instead"
    )]
    SpaceTooLarge { size: u128, guard: u128 },

    /// Integer overflow in a combinatorial computation.
    #[error("arithmetic overflow computing {0}")]
    Overflow(&'static str),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at train step {step}")]
    NonFiniteLoss { step: u64 },

    /// A checkpoint file is malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Experiment configuration problems, with field-level context.
    #[error("config error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
