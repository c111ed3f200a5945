//! Solver-agnostic MILP representation and the full supply-chain formulation.
//!
//! Variable order is fixed: suppliers, consumers, flows (edges by id, or
//! aggregated edges), processed amounts, installed counts. Balance rows come
//! first, ordered by `(node, product)`, followed by one technology-capacity row
//! per technology. Capacity bounds are variable bounds, not rows.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::backend::MilpBackend;
use crate::error::{Error, Result};
use crate::model::{evaluate_welfare, validate_instance, Allocation, SupplyChainInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarRef {
    pub index: usize,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

/// Semantic tag of a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VarLabel {
    Supply(usize),
    Demand(usize),
    Flow(usize),
    Process(usize),
    Build(usize),
    AggregatedFlow(usize),
}

impl fmt::Display for VarLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarLabel::Supply(i) => write!(f, "s_{i}"),
            VarLabel::Demand(i) => write!(f, "d_{i}"),
            VarLabel::Flow(i) => write!(f, "f_{i}"),
            VarLabel::Process(i) => write!(f, "xi_{i}"),
            VarLabel::Build(i) => write!(f, "y_{i}"),
            VarLabel::AggregatedFlow(i) => write!(f, "fa_{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowLabel {
    /// Product balance at a node.
    Balance { node: usize, product: usize },
    /// Aggregated product balance over a partition.
    PartitionBalance { partition: usize, product: usize },
    /// Processed amount bounded by installed capacity.
    TechCapacity(usize),
    Other(usize),
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowLabel::Balance { node, product } => write!(f, "bal_n{node}_p{product}"),
            RowLabel::PartitionBalance { partition, product } => {
                write!(f, "bal_c{partition}_p{product}")
            }
            RowLabel::TechCapacity(t) => write!(f, "cap_t{t}"),
            RowLabel::Other(i) => write!(f, "row{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: RowLabel,
    /// Sparse coefficients, sorted by variable index, without duplicates or
    /// explicit zeros.
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A maximization MILP with labelled variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MilpProblem {
    pub objective: Vec<f64>,
    pub vars: Vec<VarRef>,
    pub labels: Vec<VarLabel>,
    pub rows: Vec<Row>,
}

impl MilpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, label: VarLabel, kind: VarKind, lower: f64, upper: f64, obj: f64) -> usize {
        let index = self.vars.len();
        self.vars.push(VarRef { index, kind, lower, upper });
        self.labels.push(label);
        self.objective.push(obj);
        index
    }

    /// Adds a row, merging repeated variables and dropping zero coefficients.
    pub fn add_row(&mut self, label: RowLabel, coeffs: impl IntoIterator<Item = (usize, f64)>, relation: Relation, rhs: f64) {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (v, c) in coeffs {
            *merged.entry(v).or_default() += c;
        }
        let coeffs = merged.into_iter().filter(|(_, c)| *c != 0.0).collect();
        self.rows.push(Row { label, coeffs, relation, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_continuous(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Continuous).count()
    }

    pub fn num_integer(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Integer).count()
    }

    pub fn num_equalities(&self) -> usize {
        self.rows.iter().filter(|r| r.relation == Relation::Eq).count()
    }

    pub fn num_inequalities(&self) -> usize {
        self.rows.len() - self.num_equalities()
    }

    pub fn var_of(&self, label: VarLabel) -> Option<usize> {
        self.labels.iter().position(|l| *l == label)
    }

    /// Objective value of a full variable vector.
    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, x)| c * x).sum()
    }

    /// Checks the structural invariants: bounds ordered, integer bounds
    /// integral, labels a bijection, rows referencing declared variables.
    pub fn check(&self) -> Result<()> {
        let n = self.vars.len();
        if self.labels.len() != n || self.objective.len() != n {
            return Err(Error::MalformedProblem(format!(
                "{} vars, {} labels, {} objective coefficients",
                n,
                self.labels.len(),
                self.objective.len()
            )));
        }
        for (i, v) in self.vars.iter().enumerate() {
            if v.index != i {
                return Err(Error::MalformedProblem(format!("variable {i} carries index {}", v.index)));
            }
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(Error::MalformedProblem(format!(
                    "variable {} has bounds [{}, {}]",
                    self.labels[i], v.lower, v.upper
                )));
            }
            if v.kind == VarKind::Integer
                && ((v.lower.is_finite() && v.lower.fract() != 0.0)
                    || (v.upper.is_finite() && v.upper.fract() != 0.0))
            {
                return Err(Error::MalformedProblem(format!(
                    "integer variable {} has fractional bounds",
                    self.labels[i]
                )));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for l in &self.labels {
            if !seen.insert(*l) {
                return Err(Error::MalformedProblem(format!("label {l} used twice")));
            }
        }
        for r in &self.rows {
            if let Some((v, _)) = r.coeffs.iter().find(|(v, _)| *v >= n) {
                return Err(Error::MalformedProblem(format!("row {} references variable {v}", r.label)));
            }
        }
        Ok(())
    }

    /// Renders the problem in CPLEX LP text format. Variables are named by
    /// their labels (`s_i`, `d_j`, `f_l`, `xi_t`, `y_t`, `fa_k`).
    pub fn to_lp_string(&self) -> String {
        fn term(out: &mut String, first: &mut bool, coef: f64, name: &str) {
            if *first {
                if coef < 0.0 {
                    out.push_str("- ");
                }
            } else {
                out.push_str(if coef < 0.0 { " - " } else { " + " });
            }
            *first = false;
            let _ = write!(out, "{} {}", coef.abs(), name);
        }
        let names: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        let mut out = String::from("\\ supply-chain model\nMaximize\n obj: ");
        let mut first = true;
        for (i, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                term(&mut out, &mut first, c, &names[i]);
            }
        }
        if first {
            out.push('0');
        }
        out.push_str("\nSubject To\n");
        for r in &self.rows {
            let _ = write!(out, " {}: ", r.label);
            let mut first = true;
            for &(v, c) in &r.coeffs {
                term(&mut out, &mut first, c, &names[v]);
            }
            if first {
                out.push_str("0 ");
                out.push_str(&names.first().cloned().unwrap_or_default());
            }
            let op = match r.relation {
                Relation::Eq => "=",
                Relation::Le => "<=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, " {op} {}", r.rhs);
        }
        out.push_str("Bounds\n");
        for (v, name) in self.vars.iter().zip(&names) {
            let lo = fmt_bound(v.lower);
            let hi = fmt_bound(v.upper);
            let _ = writeln!(out, " {lo} <= {name} <= {hi}");
        }
        let ints: Vec<&str> = self
            .vars
            .iter()
            .zip(&names)
            .filter(|(v, _)| v.kind == VarKind::Integer)
            .map(|(_, n)| n.as_str())
            .collect();
        if !ints.is_empty() {
            out.push_str("Generals\n");
            for n in ints {
                let _ = writeln!(out, " {n}");
            }
        }
        out.push_str("End\n");
        out
    }
}

fn fmt_bound(b: f64) -> String {
    if b == f64::INFINITY {
        "+inf".into()
    } else if b == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        b.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    FeasibleWithGap,
    Infeasible,
    Unbounded,
    TimeLimit,
    MemoryLimit,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::FeasibleWithGap)
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::FeasibleWithGap => "feasible-with-gap",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::TimeLimit => "time-limit",
            SolveStatus::MemoryLimit => "memory-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Present iff the status carries a solution.
    pub objective: Option<f64>,
    /// One value per variable; empty without a solution.
    pub values: Vec<f64>,
    /// Proven dual bound on the optimum (an upper bound when maximizing).
    pub best_bound: Option<f64>,
    pub mip_gap: Option<f64>,
    /// A time or node limit stopped the search.
    pub limit_reached: bool,
    pub wall_seconds: f64,
    pub peak_memory_bytes: Option<u64>,
}

impl SolveResult {
    pub fn without_solution(status: SolveStatus, wall_seconds: f64) -> Self {
        SolveResult {
            status,
            objective: None,
            values: Vec::new(),
            best_bound: None,
            mip_gap: None,
            limit_reached: matches!(status, SolveStatus::TimeLimit),
            wall_seconds,
            peak_memory_bytes: None,
        }
    }

    /// The tightest valid upper bound this result certifies on the model's
    /// own optimum: the objective at optimality, otherwise the dual bound.
    pub fn certified_upper_bound(&self) -> Option<f64> {
        match self.status {
            SolveStatus::Optimal => self.objective,
            _ => self.best_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Seconds; `None` means unlimited.
    pub time_limit: Option<f64>,
    /// Relative MIP gap at which the search may stop.
    pub mip_gap: f64,
    pub threads: usize,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            time_limit: None,
            mip_gap: 0.0,
            threads: 1,
            seed: 0,
        }
    }
}

impl SolverParams {
    pub fn check(&self) -> Result<()> {
        if let Some(t) = self.time_limit {
            if !(t >= 0.0) {
                return Err(Error::InvalidConfig(format!("time limit {t} must be nonnegative")));
            }
        }
        if !(self.mip_gap >= 0.0) || !self.mip_gap.is_finite() {
            return Err(Error::InvalidConfig(format!("mip gap {} must be nonnegative", self.mip_gap)));
        }
        Ok(())
    }
}

/// Solves `prob` with `backend` after checking it is well formed.
///
/// A problem without variables is decided here: optimal with objective 0 if
/// every row is satisfied by the empty assignment, infeasible otherwise.
pub fn solve(prob: &MilpProblem, params: &SolverParams, backend: &dyn MilpBackend) -> Result<SolveResult> {
    prob.check()?;
    params.check()?;
    if prob.vars.is_empty() {
        let ok = prob.rows.iter().all(|r| match r.relation {
            Relation::Eq => r.rhs == 0.0,
            Relation::Le => 0.0 <= r.rhs,
            Relation::Ge => 0.0 >= r.rhs,
        });
        return Ok(if ok {
            SolveResult {
                objective: Some(0.0),
                best_bound: Some(0.0),
                mip_gap: Some(0.0),
                ..SolveResult::without_solution(SolveStatus::Optimal, 0.0)
            }
        } else {
            SolveResult::without_solution(SolveStatus::Infeasible, 0.0)
        });
    }
    backend.solve(prob, params)
}

pub(crate) struct MarketVars {
    pub supply: Vec<usize>,
    pub demand: Vec<usize>,
}

pub(crate) struct TechVars {
    pub process: Vec<usize>,
    pub build: Vec<usize>,
}

pub(crate) fn add_market_vars(prob: &mut MilpProblem, inst: &SupplyChainInstance) -> MarketVars {
    let supply = inst
        .suppliers()
        .iter()
        .enumerate()
        .map(|(i, s)| prob.add_var(VarLabel::Supply(i), VarKind::Continuous, 0.0, s.capacity, -s.cost))
        .collect();
    let demand = inst
        .consumers()
        .iter()
        .enumerate()
        .map(|(j, c)| prob.add_var(VarLabel::Demand(j), VarKind::Continuous, 0.0, c.capacity, c.value))
        .collect();
    MarketVars { supply, demand }
}

pub(crate) fn add_tech_vars(prob: &mut MilpProblem, inst: &SupplyChainInstance) -> TechVars {
    let techs = inst.technologies();
    let process = techs
        .iter()
        .enumerate()
        .map(|(t, tech)| prob.add_var(VarLabel::Process(t), VarKind::Continuous, 0.0, f64::INFINITY, -tech.op_cost))
        .collect();
    let build = techs
        .iter()
        .enumerate()
        .map(|(t, tech)| {
            prob.add_var(
                VarLabel::Build(t),
                VarKind::Integer,
                0.0,
                f64::from(tech.max_facilities),
                -tech.install_cost,
            )
        })
        .collect();
    TechVars { process, build }
}

pub(crate) fn add_tech_rows(prob: &mut MilpProblem, inst: &SupplyChainInstance, tv: &TechVars) {
    for (t, tech) in inst.technologies().iter().enumerate() {
        prob.add_row(
            RowLabel::TechCapacity(t),
            [(tv.process[t], 1.0), (tv.build[t], -tech.unit_capacity)],
            Relation::Le,
            0.0,
        );
    }
}

/// Builds the full model, or the restricted model when `active` masks edges
/// out. Masked-out edges get no variable at all.
pub(crate) fn formulate_with_mask(inst: &SupplyChainInstance, active: Option<&[bool]>) -> Result<MilpProblem> {
    let violations = validate_instance(inst);
    if !violations.is_empty() {
        return Err(Error::InvalidInstance(violations));
    }
    let mut prob = MilpProblem::new();
    let mv = add_market_vars(&mut prob, inst);
    let flow: Vec<Option<usize>> = inst
        .edges()
        .iter()
        .enumerate()
        .map(|(l, e)| {
            let on = active.map_or(true, |m| m[l]);
            on.then(|| prob.add_var(VarLabel::Flow(l), VarKind::Continuous, 0.0, e.capacity, -e.cost))
        })
        .collect();
    let tv = add_tech_vars(&mut prob, inst);

    let idx = inst.index();
    for n in 0..inst.num_nodes() {
        for p in 0..inst.num_products() {
            let mut coeffs = Vec::new();
            coeffs.extend(idx.suppliers_at(n, p).iter().map(|&i| (mv.supply[i], 1.0)));
            coeffs.extend(idx.consumers_at(n, p).iter().map(|&j| (mv.demand[j], -1.0)));
            coeffs.extend(idx.edges_in(n, p).iter().filter_map(|&l| flow[l]).map(|v| (v, 1.0)));
            coeffs.extend(idx.edges_out(n, p).iter().filter_map(|&l| flow[l]).map(|v| (v, -1.0)));
            for &t in idx.techs_at(n) {
                let g = inst.technologies()[t].yield_of(p);
                if g != 0.0 {
                    coeffs.push((tv.process[t], g));
                }
            }
            prob.add_row(RowLabel::Balance { node: n, product: p }, coeffs, Relation::Eq, 0.0);
        }
    }
    add_tech_rows(&mut prob, inst, &tv);
    Ok(prob)
}

/// The full supply-chain design model: one balance row per `(node, product)`
/// (empty ones included), one capacity row per technology.
pub fn formulate_full(inst: &SupplyChainInstance) -> Result<MilpProblem> {
    formulate_with_mask(inst, None)
}

/// Maps solver values back onto an [`Allocation`] of the original instance.
///
/// Flows of edges missing from the model stay zero, which is exactly the
/// lifting of a restricted solution. Aggregated flows are not disaggregated;
/// for such models the welfare is the original-instance welfare of the
/// non-flow fields and no reconciliation against the objective is done.
pub fn extract_allocation(inst: &SupplyChainInstance, prob: &MilpProblem, result: &SolveResult) -> Result<Allocation> {
    if !result.status.has_solution() {
        return Err(Error::NoSolution(result.status));
    }
    if result.values.len() != prob.num_vars() {
        return Err(Error::DimensionMismatch {
            what: "solution values",
            expected: prob.num_vars(),
            found: result.values.len(),
        });
    }
    let mut alloc = Allocation::zero(inst);
    let mut aggregated = false;
    for (label, &v) in prob.labels.iter().zip(&result.values) {
        let v = v.max(0.0);
        let slot = match *label {
            VarLabel::Supply(i) => alloc.s.get_mut(i),
            VarLabel::Demand(j) => alloc.d.get_mut(j),
            VarLabel::Flow(l) => alloc.f.get_mut(l),
            VarLabel::Process(t) => alloc.xi.get_mut(t),
            VarLabel::Build(t) => {
                if let Some(y) = alloc.y.get_mut(t) {
                    *y = v.round() as u32;
                }
                continue;
            }
            VarLabel::AggregatedFlow(_) => {
                aggregated = true;
                continue;
            }
        };
        match slot {
            Some(x) => *x = v,
            None => return Err(Error::MalformedProblem(format!("label {label} outside the instance"))),
        }
    }
    alloc.welfare = evaluate_welfare(inst, &alloc)?;
    if !aggregated {
        if let Some(obj) = result.objective {
            if (obj - alloc.welfare).abs() > 1e-6 * (1.0 + obj.abs()) {
                return Err(Error::ObjectiveMismatch { objective: obj, welfare: alloc.welfare });
            }
        }
    }
    Ok(alloc)
}
