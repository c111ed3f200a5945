//! Solver backends.
//!
//! A backend takes a checked [`MilpProblem`] and returns a [`SolveResult`].
//! The bundled backend wraps `microlp`, a pure-Rust sparse simplex with
//! branch-and-bound, so everything (including the browser demo) runs without
//! native solver libraries.

use std::time::Duration;

use web_time::Instant;

use crate::error::{Error, Result};
use crate::milp::{MilpProblem, Relation, SolveResult, SolveStatus, SolverParams, VarKind};

/// Environment variable naming the default backend.
pub const BACKEND_ENV: &str = "GSC_SOLVER";

/// A MILP solver. Implementations must be usable from several threads at
/// once; each call gets its own solver session.
pub trait MilpBackend: Send + Sync {
    fn name(&self) -> &str;

    fn solve(&self, prob: &MilpProblem, params: &SolverParams) -> Result<SolveResult>;
}

/// Looks a backend up by name. Known names: `microlp`.
pub fn backend_by_name(name: &str) -> Result<Box<dyn MilpBackend>> {
    match name.trim().to_ascii_lowercase().as_str() {
        "microlp" | "default" | "" => Ok(Box::new(MicrolpBackend)),
        other => Err(Error::UnknownBackend(other.to_string())),
    }
}

/// The backend named by [`BACKEND_ENV`], or `microlp` when unset.
pub fn default_backend() -> Result<Box<dyn MilpBackend>> {
    match std::env::var(BACKEND_ENV) {
        Ok(name) => backend_by_name(&name),
        Err(_) => Ok(Box::new(MicrolpBackend)),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MicrolpBackend;

impl MicrolpBackend {
    fn build(prob: &MilpProblem) -> (microlp::Problem, Vec<microlp::Variable>) {
        let mut m = microlp::Problem::new(microlp::OptimizationDirection::Maximize);
        let vars: Vec<_> = prob
            .vars
            .iter()
            .zip(&prob.objective)
            .map(|(v, &c)| match v.kind {
                VarKind::Continuous => m.add_var(c, (v.lower, v.upper)),
                VarKind::Integer => {
                    let lo = clamp_i32(v.lower);
                    let hi = clamp_i32(v.upper);
                    m.add_integer_var(c, (lo, hi))
                }
            })
            .collect();
        for row in &prob.rows {
            let expr: Vec<(microlp::Variable, f64)> = row.coeffs.iter().map(|&(i, c)| (vars[i], c)).collect();
            let op = match row.relation {
                Relation::Eq => microlp::ComparisonOp::Eq,
                Relation::Le => microlp::ComparisonOp::Le,
                Relation::Ge => microlp::ComparisonOp::Ge,
            };
            m.add_constraint(&expr[..], op, row.rhs);
        }
        (m, vars)
    }
}

fn clamp_i32(v: f64) -> i32 {
    if v >= f64::from(i32::MAX) {
        i32::MAX
    } else if v <= f64::from(i32::MIN) {
        i32::MIN
    } else {
        v as i32
    }
}

impl MilpBackend for MicrolpBackend {
    fn name(&self) -> &str {
        "microlp"
    }

    fn solve(&self, prob: &MilpProblem, params: &SolverParams) -> Result<SolveResult> {
        let started = Instant::now();
        let (m, vars) = Self::build(prob);
        let mut opts = microlp::SolveOptions::default();
        opts.time_limit = params.time_limit.map(Duration::from_secs_f64);
        opts.mip_gap = params.mip_gap;
        let outcome = m.solve_with(opts);
        let wall = started.elapsed().as_secs_f64();
        let fail = |message: String| Error::Backend {
            backend: "microlp".into(),
            message,
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(microlp::Error::Infeasible) => {
                return Ok(SolveResult::without_solution(SolveStatus::Infeasible, wall))
            }
            Err(microlp::Error::Unbounded) => {
                return Ok(SolveResult::without_solution(SolveStatus::Unbounded, wall))
            }
            Err(e) => return Err(fail(e.to_string())),
        };
        let stats = outcome.stats();
        let limited = matches!(
            outcome.termination_reason(),
            microlp::TerminationReason::TimeLimit | microlp::TerminationReason::NodeLimit
        );
        match outcome.solution() {
            Some(sol) => {
                let status = match sol.status() {
                    microlp::SolutionStatus::Optimal => SolveStatus::Optimal,
                    microlp::SolutionStatus::Feasible => SolveStatus::FeasibleWithGap,
                };
                let values = vars
                    .iter()
                    .zip(&prob.vars)
                    .map(|(&v, r)| match r.kind {
                        VarKind::Integer => sol.var_value_raw(v).round(),
                        VarKind::Continuous => sol.var_value_raw(v),
                    })
                    .collect::<Vec<_>>();
                let objective = prob.objective_value(&values);
                Ok(SolveResult {
                    status,
                    objective: Some(objective),
                    values,
                    best_bound: stats.best_bound.or(Some(objective)).map(|b| b.max(objective)),
                    mip_gap: sol.gap(),
                    limit_reached: limited,
                    wall_seconds: wall,
                    peak_memory_bytes: None,
                })
            }
            None => Ok(SolveResult {
                best_bound: stats.best_bound,
                ..SolveResult::without_solution(SolveStatus::TimeLimit, wall)
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{RowLabel, VarLabel};

    #[test]
    fn unknown_backend_name() {
        assert!(matches!(backend_by_name("gurobi"), Err(Error::UnknownBackend(_))));
        assert_eq!(backend_by_name("MicroLP").unwrap().name(), "microlp");
    }

    #[test]
    fn small_knapsack() {
        // max 5a + 4b + 3c, 2a + 3b + c <= 5, 4a + b + 2c <= 11, 3a + 4b + 2c <= 8, integers.
        let mut p = MilpProblem::new();
        let a = p.add_var(VarLabel::Build(0), VarKind::Integer, 0.0, 10.0, 5.0);
        let b = p.add_var(VarLabel::Build(1), VarKind::Integer, 0.0, 10.0, 4.0);
        let c = p.add_var(VarLabel::Build(2), VarKind::Integer, 0.0, 10.0, 3.0);
        p.add_row(RowLabel::Other(0), [(a, 2.0), (b, 3.0), (c, 1.0)], Relation::Le, 5.0);
        p.add_row(RowLabel::Other(1), [(a, 4.0), (b, 1.0), (c, 2.0)], Relation::Le, 11.0);
        p.add_row(RowLabel::Other(2), [(a, 3.0), (b, 4.0), (c, 2.0)], Relation::Le, 8.0);
        let r = MicrolpBackend.solve(&p, &SolverParams::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        // Enumerated by hand: a=2, c=1 gives 13, the best integer point.
        assert_eq!(r.objective, Some(13.0));
        assert_eq!(r.values, vec![2.0, 0.0, 1.0]);
    }

    #[test]
    fn unbounded_problem() {
        let mut p = MilpProblem::new();
        p.add_var(VarLabel::Demand(0), VarKind::Continuous, 0.0, f64::INFINITY, 1.0);
        let r = MicrolpBackend.solve(&p, &SolverParams::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Unbounded);
    }
}
