//! Certified bounds for supply-chain design MILPs.
//!
//! Edge sampling solves restricted models whose optima are lower bounds on
//! the true optimal welfare; graph coarsening solves relaxed models whose
//! optima are upper bounds. Running both over a schedule of growing levels
//! yields a shrinking certified optimality gap without solving the full
//! model.

pub mod backend;
pub mod coarsening;
pub mod driver;
pub mod error;
pub mod generator;
pub mod io;
pub mod milp;
pub mod model;
mod par;
pub mod sampling;
pub mod stats;

pub use backend::{backend_by_name, default_backend, MicrolpBackend, MilpBackend};
pub use coarsening::{
    assign_partitions, formulate_coarse, lift_check, select_pivots, upper_bound_run, AggEdge, CoarsePlan,
    LiftReport, UpperBoundStats,
};
pub use driver::{format_gap, gap, run_gsc, BoundReport, GscConfig, LevelSpec};
pub use error::{Error, Result};
pub use generator::{generate, EdgeRule, GenConfig};
pub use milp::{formulate_full, solve, MilpProblem, SolveResult, SolveStatus, SolverParams};
pub use model::{
    check_feasibility, evaluate_welfare, validate_instance, Allocation, InstanceParts, SupplyChainInstance,
};
pub use sampling::{formulate_sampled, lower_bound_run, sample_edges, EdgeSample, LowerBoundStats};
