use thiserror::Error;

use crate::solver::Solution;

/// Which model map failed to produce a finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMap {
    Drift,
    Diffusion,
    RunningCost,
}

impl std::fmt::Display for ModelMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelMap::Drift => f.write_str("drift"),
            ModelMap::Diffusion => f.write_str("diffusion"),
            ModelMap::RunningCost => f.write_str("running_cost"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("model has an empty action set")]
    EmptyActionSet,
    #[error("discount rate must be positive, got {0}")]
    NonpositiveDiscount(f64),
    #[error("switch cost K({0},{1}) is below the minimum positive switching cost")]
    NonpositiveSwitchCost(usize, usize),
    #[error("{map} evaluation failed at x={point:?}, mode {mode}, action {action}")]
    EvaluationFailure {
        map: ModelMap,
        point: Vec<f64>,
        mode: usize,
        action: usize,
    },
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("degenerate grid axis {axis}: {reason}")]
    DegenerateAxis { axis: usize, reason: String },
    #[error("index {index} out of range (size {size})")]
    OutOfRange { index: usize, size: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("value field contains a non-finite value at position {0}")]
    NonFiniteValue(usize),

    #[error("time step must be positive, got {0}")]
    NonpositiveDt(f64),
    #[error("simulation step must be positive and not exceed the horizon (dt_sim={dt_sim}, horizon={horizon})")]
    NonpositiveStep { dt_sim: f64, horizon: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("solver did not converge after {} sweeps (last change {:e})", .0.stats.sweeps, .0.stats.final_change)]
    NotConverged(Box<Solution>),

    #[error("invalid benchmark parameters: {0}")]
    InvalidParams(String),

    #[error("malformed value field document: {0}")]
    Format(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
