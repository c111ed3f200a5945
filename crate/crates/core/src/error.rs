use thiserror::Error;

use crate::milp::SolveStatus;
use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid instance ({} violation(s)){}", .0.len(), first_violation(.0))]
    InvalidInstance(Vec<Violation>),

    #[error("{what} = {value} is outside the allowed range [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("edge sample does not match the instance: {0}")]
    SampleMismatch(String),

    #[error("invalid coarse plan: {0}")]
    InvalidPlan(String),

    #[error("malformed MILP problem: {0}")]
    MalformedProblem(String),

    #[error("solver backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("unknown solver backend `{0}`")]
    UnknownBackend(String),

    #[error("solve finished with status {0} and carries no solution")]
    NoSolution(SolveStatus),

    #[error("solver objective {objective} disagrees with recomputed welfare {welfare}")]
    ObjectiveMismatch { objective: f64, welfare: f64 },

    #[error("gap is undefined for lb = {lb}, ub = {ub}")]
    UndefinedGap { lb: f64, ub: f64 },

    #[error("lower bound {lb} exceeds upper bound {ub}")]
    BoundsCrossed { lb: f64, ub: f64 },

    #[error("level {level} produced no successful solves: {}", .diagnostics.join("; "))]
    LevelFailed {
        level: usize,
        diagnostics: Vec<String>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn first_violation(v: &[Violation]) -> String {
    v.first().map(|v| format!(": {v}")).unwrap_or_default()
}
