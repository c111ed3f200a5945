//! Graph-coarsening relaxation.
//!
//! Randomly drawn pivot nodes anchor partitions; every other node joins its
//! nearest pivot. Edges inside a partition are dropped together with their
//! cost, and edges crossing partitions are pooled per
//! `(source partition, destination partition, product)` into one aggregated
//! edge with the summed capacity and the cheapest member cost. Balances are
//! summed per partition. The resulting model is a relaxation of the original,
//! so its optimum bounds the true optimum from above.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::backend::MilpBackend;
use crate::error::{Error, Result};
use crate::milp::{
    add_market_vars, add_tech_rows, add_tech_vars, solve, MilpProblem, Relation, RowLabel, SolveStatus,
    SolverParams, VarKind, VarLabel,
};
use crate::model::{evaluate_welfare, validate_instance, Allocation, FlowKind, SupplyChainInstance};
use crate::par::map_indexed;
use crate::sampling::shuffled_prefix;
use crate::stats::summarize;

/// Global edges sharing source partition, destination partition and product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggEdge {
    pub k: usize,
    pub src_part: usize,
    pub dst_part: usize,
    pub product: usize,
    pub members: Vec<usize>,
    /// Sum of member capacities.
    pub capacity: f64,
    /// Cheapest member cost.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarsePlan {
    /// Pivot node ids in ascending order; pivot `c` anchors partition `c`.
    pub pivots: Vec<usize>,
    /// Partition of every node.
    pub partition_of: Vec<usize>,
    pub local_edges: Vec<usize>,
    pub global_edges: Vec<usize>,
    pub agg_edges: Vec<AggEdge>,
}

impl CoarsePlan {
    /// Draws pivots, assigns nodes by Euclidean distance and aggregates edges.
    pub fn build(inst: &SupplyChainInstance, partitions: usize, seed: u64) -> Result<Self> {
        let pivots = select_pivots(inst, partitions, seed)?;
        Self::from_pivots(inst, pivots)
    }

    pub fn from_pivots(inst: &SupplyChainInstance, pivots: Vec<usize>) -> Result<Self> {
        let partition_of = assign_partitions(inst, &pivots)?;
        let (local_edges, global_edges, agg_edges) = classify_and_aggregate(inst, &partition_of)?;
        Ok(CoarsePlan { pivots, partition_of, local_edges, global_edges, agg_edges })
    }

    pub fn num_partitions(&self) -> usize {
        self.pivots.len()
    }

    /// Checks the plan's structural invariants against `inst`.
    pub fn check(&self, inst: &SupplyChainInstance) -> Result<()> {
        let c = self.pivots.len();
        let bad = |m: String| Err(Error::InvalidPlan(m));
        if c == 0 {
            return bad("no pivots".into());
        }
        if self.partition_of.len() != inst.num_nodes() {
            return bad(format!("{} partition entries for {} nodes", self.partition_of.len(), inst.num_nodes()));
        }
        for (i, &p) in self.pivots.iter().enumerate() {
            if p >= inst.num_nodes() || self.partition_of[p] != i {
                return bad(format!("pivot {p} is not the anchor of partition {i}"));
            }
        }
        if let Some(n) = self.partition_of.iter().position(|&p| p >= c) {
            return bad(format!("node {n} mapped outside 0..{c}"));
        }
        let (local, global, agg) = classify_and_aggregate(inst, &self.partition_of)?;
        if local != self.local_edges || global != self.global_edges || agg != self.agg_edges {
            return bad("edge classification is stale".into());
        }
        Ok(())
    }
}

/// Uniform sample of `count` distinct nodes, returned in ascending order.
pub fn select_pivots(inst: &SupplyChainInstance, count: usize, seed: u64) -> Result<Vec<usize>> {
    let n = inst.num_nodes();
    if count == 0 || count > n {
        return Err(Error::OutOfRange { what: "partition count", value: count, min: 1, max: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pivots = shuffled_prefix((0..n).collect(), count, &mut rng);
    pivots.sort_unstable();
    Ok(pivots)
}

/// Assigns each node to its nearest pivot (Euclidean distance on node
/// coordinates). Pivots map to themselves.
pub fn assign_partitions(inst: &SupplyChainInstance, pivots: &[usize]) -> Result<Vec<usize>> {
    let nodes = inst.nodes();
    assign_partitions_by(inst, pivots, |a, b| nodes[a].distance(&nodes[b]))
}

/// Nearest-pivot assignment under an arbitrary distance. Ties go to the pivot
/// listed first.
///
/// Minimizing total pivot-to-node distance subject to each node joining
/// exactly one pivot separates per node, so this greedy choice is optimal.
pub fn assign_partitions_by(
    inst: &SupplyChainInstance,
    pivots: &[usize],
    distance: impl Fn(usize, usize) -> f64,
) -> Result<Vec<usize>> {
    let n = inst.num_nodes();
    if pivots.is_empty() {
        return Err(Error::InvalidPlan("no pivots".into()));
    }
    let mut partition_of = vec![usize::MAX; n];
    for (c, &p) in pivots.iter().enumerate() {
        if p >= n || partition_of[p] != usize::MAX {
            return Err(Error::InvalidPlan(format!("pivot {p} is out of range or repeated")));
        }
        partition_of[p] = c;
    }
    for node in 0..n {
        if partition_of[node] != usize::MAX {
            continue;
        }
        let mut best = (0, f64::INFINITY);
        for (c, &p) in pivots.iter().enumerate() {
            let d = distance(p, node);
            if d < best.1 {
                best = (c, d);
            }
        }
        partition_of[node] = best.0;
    }
    Ok(partition_of)
}

/// Splits edges into local and global ones and pools the global edges.
/// Aggregated edges are ordered by `(src_part, dst_part, product)`.
pub fn classify_and_aggregate(
    inst: &SupplyChainInstance,
    partition_of: &[usize],
) -> Result<(Vec<usize>, Vec<usize>, Vec<AggEdge>)> {
    if partition_of.len() != inst.num_nodes() {
        return Err(Error::InvalidPlan(format!(
            "{} partition entries for {} nodes",
            partition_of.len(),
            inst.num_nodes()
        )));
    }
    let mut local = Vec::new();
    let mut global = Vec::new();
    let mut groups: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
    for (l, e) in inst.edges().iter().enumerate() {
        let (cs, cr) = (partition_of[e.src], partition_of[e.dst]);
        if cs == cr {
            local.push(l);
        } else {
            global.push(l);
            groups.entry((cs, cr, e.product)).or_default().push(l);
        }
    }
    let edges = inst.edges();
    let agg = groups
        .into_iter()
        .enumerate()
        .map(|(k, ((src_part, dst_part, product), members))| {
            let capacity = members.iter().map(|&l| edges[l].capacity).sum();
            let cost = members.iter().map(|&l| edges[l].cost).fold(f64::INFINITY, f64::min);
            AggEdge { k, src_part, dst_part, product, members, capacity, cost }
        })
        .collect();
    Ok((local, global, agg))
}

/// The coarse model: individual supply, demand, processing and build
/// variables; one flow per aggregated edge; one balance row per
/// `(partition, product)`; technology capacity rows unchanged.
pub fn formulate_coarse(inst: &SupplyChainInstance, plan: &CoarsePlan) -> Result<MilpProblem> {
    let violations = validate_instance(inst);
    if !violations.is_empty() {
        return Err(Error::InvalidInstance(violations));
    }
    plan.check(inst)?;
    let nc = plan.num_partitions();
    let np = inst.num_products();
    let mut prob = MilpProblem::new();
    let mv = add_market_vars(&mut prob, inst);
    let agg: Vec<usize> = plan
        .agg_edges
        .iter()
        .map(|a| prob.add_var(VarLabel::AggregatedFlow(a.k), VarKind::Continuous, 0.0, a.capacity, -a.cost))
        .collect();
    let tv = add_tech_vars(&mut prob, inst);

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nc * np];
    let cell = |node: usize, p: usize| plan.partition_of[node] * np + p;
    for (i, s) in inst.suppliers().iter().enumerate() {
        rows[cell(s.node, s.product)].push((mv.supply[i], 1.0));
    }
    for (j, c) in inst.consumers().iter().enumerate() {
        rows[cell(c.node, c.product)].push((mv.demand[j], -1.0));
    }
    for (a, &v) in plan.agg_edges.iter().zip(&agg) {
        rows[a.dst_part * np + a.product].push((v, 1.0));
        rows[a.src_part * np + a.product].push((v, -1.0));
    }
    for (t, tech) in inst.technologies().iter().enumerate() {
        for &(p, g) in &tech.yields {
            if g != 0.0 {
                rows[cell(tech.node, p)].push((tv.process[t], g));
            }
        }
    }
    for (idx, coeffs) in rows.into_iter().enumerate() {
        let label = RowLabel::PartitionBalance { partition: idx / np.max(1), product: idx % np.max(1) };
        prob.add_row(label, coeffs, Relation::Eq, 0.0);
    }
    add_tech_rows(&mut prob, inst, &tv);
    Ok(prob)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LiftViolation {
    AggregatedCapacity { k: usize, flow: f64, capacity: f64 },
    PartitionBalance { partition: usize, product: usize, residual: f64 },
    /// Local inflow and outflow of a partition differ.
    LocalFlowIdentity { partition: usize, product: usize, inflow: f64, outflow: f64 },
    TechCapacity { tech: usize },
    Bound { kind: FlowKind, index: usize },
    /// Coarse welfare fell below the original welfare.
    WelfareOrder { full: f64, coarse: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftReport {
    pub agg_flows: Vec<f64>,
    pub full_welfare: f64,
    pub coarse_welfare: f64,
    pub violations: Vec<LiftViolation>,
}

impl LiftReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first_violation(&self) -> Option<&LiftViolation> {
        self.violations.first()
    }
}

/// Maps a full-model allocation into the coarse variable space and checks
/// every coarse constraint, the local-flow identity and the welfare order.
/// Any violation for a feasible input is a bug.
pub fn lift_check(inst: &SupplyChainInstance, plan: &CoarsePlan, alloc: &Allocation, tol: f64) -> Result<LiftReport> {
    alloc.check_dims(inst)?;
    plan.check(inst)?;
    let np = inst.num_products();
    let nc = plan.num_partitions();
    let slack = |scale: f64| tol * (1.0 + scale.abs());
    let mut violations = Vec::new();

    let agg_flows: Vec<f64> = plan
        .agg_edges
        .iter()
        .map(|a| a.members.iter().map(|&l| alloc.f[l]).sum())
        .collect();
    for (a, &flow) in plan.agg_edges.iter().zip(&agg_flows) {
        if flow < -slack(a.capacity) || flow > a.capacity + slack(a.capacity) {
            violations.push(LiftViolation::AggregatedCapacity { k: a.k, flow, capacity: a.capacity });
        }
    }

    // Local in/out sums are gathered from the per-node index tables so the
    // identity is checked from two independent directions.
    let idx = inst.index();
    let mut local_in = vec![0.0; nc * np];
    let mut local_out = vec![0.0; nc * np];
    let edges = inst.edges();
    for n in 0..inst.num_nodes() {
        let c = plan.partition_of[n];
        for p in 0..np {
            for &l in idx.edges_in(n, p) {
                if plan.partition_of[edges[l].src] == c {
                    local_in[c * np + p] += alloc.f[l];
                }
            }
            for &l in idx.edges_out(n, p) {
                if plan.partition_of[edges[l].dst] == c {
                    local_out[c * np + p] += alloc.f[l];
                }
            }
        }
    }
    for cell in 0..nc * np {
        let (i, o) = (local_in[cell], local_out[cell]);
        if (i - o).abs() > slack(i.max(o)) {
            violations.push(LiftViolation::LocalFlowIdentity {
                partition: cell / np,
                product: cell % np,
                inflow: i,
                outflow: o,
            });
        }
    }

    let mut inflow = vec![0.0; nc * np];
    let mut outflow = vec![0.0; nc * np];
    let cell = |node: usize, p: usize| plan.partition_of[node] * np + p;
    for (s, v) in inst.suppliers().iter().zip(&alloc.s) {
        inflow[cell(s.node, s.product)] += v;
    }
    for (c, v) in inst.consumers().iter().zip(&alloc.d) {
        outflow[cell(c.node, c.product)] += v;
    }
    for (a, v) in plan.agg_edges.iter().zip(&agg_flows) {
        inflow[a.dst_part * np + a.product] += v;
        outflow[a.src_part * np + a.product] += v;
    }
    for (t, xi) in inst.technologies().iter().zip(&alloc.xi) {
        for &(p, g) in &t.yields {
            let amount = g * xi;
            if amount >= 0.0 {
                inflow[cell(t.node, p)] += amount;
            } else {
                outflow[cell(t.node, p)] -= amount;
            }
        }
    }
    for c in 0..nc * np {
        let r = inflow[c] - outflow[c];
        if r.abs() > slack(inflow[c].max(outflow[c])) {
            violations.push(LiftViolation::PartitionBalance { partition: c / np, product: c % np, residual: r });
        }
    }

    let bounds = [
        (FlowKind::Supply, &alloc.s, inst.suppliers().iter().map(|s| s.capacity).collect::<Vec<_>>()),
        (FlowKind::Demand, &alloc.d, inst.consumers().iter().map(|c| c.capacity).collect()),
    ];
    for (kind, vals, caps) in bounds {
        for (index, (&v, &cap)) in vals.iter().zip(&caps).enumerate() {
            if v < -slack(cap) || v > cap + slack(cap) {
                violations.push(LiftViolation::Bound { kind, index });
            }
        }
    }
    for (t, tech) in inst.technologies().iter().enumerate() {
        if alloc.y[t] > tech.max_facilities {
            violations.push(LiftViolation::Bound { kind: FlowKind::Build, index: t });
        }
        let limit = f64::from(alloc.y[t]) * tech.unit_capacity;
        if alloc.xi[t] < -slack(limit) || alloc.xi[t] > limit + slack(limit) {
            violations.push(LiftViolation::TechCapacity { tech: t });
        }
    }

    let full_welfare = evaluate_welfare(inst, alloc)?;
    let transport: f64 = plan.agg_edges.iter().zip(&agg_flows).map(|(a, f)| a.cost * f).sum();
    let flow_cost: f64 = edges.iter().zip(&alloc.f).map(|(e, f)| e.cost * f).sum();
    let coarse_welfare = full_welfare + flow_cost - transport;
    if coarse_welfare < full_welfare - slack(full_welfare) {
        violations.push(LiftViolation::WelfareOrder { full: full_welfare, coarse: coarse_welfare });
    }
    Ok(LiftReport { agg_flows, full_welfare, coarse_welfare, violations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_index: usize,
    pub seed: u64,
    pub status: Option<SolveStatus>,
    /// Certified upper bound from this trial.
    pub bound: Option<f64>,
    pub num_agg_edges: usize,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundStats {
    pub partitions: usize,
    pub trials: Vec<TrialOutcome>,
    /// Bound of every usable trial, in trial order.
    pub welfares: Vec<f64>,
    /// Smallest (tightest) bound over trials.
    pub best: f64,
    pub best_trial: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci95: Option<f64>,
    pub best_plan: CoarsePlan,
}

impl UpperBoundStats {
    pub fn failures(&self) -> impl Iterator<Item = &TrialOutcome> {
        self.trials.iter().filter(|t| t.error.is_some())
    }

    pub fn mean_solve_seconds(&self) -> f64 {
        let n = self.trials.len().max(1) as f64;
        self.trials.iter().map(|t| t.wall_seconds).sum::<f64>() / n
    }
}

/// One coarse trial: plan and certified bound. A trial that stops early
/// reports the solver's dual bound, which is still valid.
pub fn solve_trial(
    inst: &SupplyChainInstance,
    partitions: usize,
    seed: u64,
    params: &SolverParams,
    backend: &dyn MilpBackend,
) -> Result<(CoarsePlan, SolveStatus, Option<f64>)> {
    let plan = CoarsePlan::build(inst, partitions, seed)?;
    let prob = formulate_coarse(inst, &plan)?;
    let res = solve(&prob, params, backend)?;
    let bound = res.certified_upper_bound();
    Ok((plan, res.status, bound))
}

/// Runs `num_trials` independent coarse trials with seeds `base_seed + trial`.
pub fn upper_bound_run(
    inst: &SupplyChainInstance,
    partitions: usize,
    num_trials: usize,
    params: &SolverParams,
    backend: &dyn MilpBackend,
    base_seed: u64,
) -> Result<UpperBoundStats> {
    upper_bound_run_threads(inst, partitions, num_trials, params, backend, base_seed, params.threads)
}

pub fn upper_bound_run_threads(
    inst: &SupplyChainInstance,
    partitions: usize,
    num_trials: usize,
    params: &SolverParams,
    backend: &dyn MilpBackend,
    base_seed: u64,
    threads: usize,
) -> Result<UpperBoundStats> {
    if num_trials == 0 {
        return Err(Error::OutOfRange { what: "number of trials", value: 0, min: 1, max: usize::MAX });
    }
    if partitions == 0 || partitions > inst.num_nodes() {
        return Err(Error::OutOfRange {
            what: "partition count",
            value: partitions,
            min: 1,
            max: inst.num_nodes(),
        });
    }
    let results = map_indexed(num_trials, threads, |trial| {
        let seed = base_seed.wrapping_add(trial as u64);
        let started = Instant::now();
        let out = solve_trial(inst, partitions, seed, params, backend);
        (trial, seed, started.elapsed().as_secs_f64(), out)
    });

    let mut trials = Vec::with_capacity(results.len());
    let mut welfares = Vec::new();
    let mut best: Option<(usize, f64, CoarsePlan)> = None;
    for (trial_index, seed, wall_seconds, out) in results {
        let mut t = TrialOutcome {
            trial_index,
            seed,
            status: None,
            bound: None,
            num_agg_edges: 0,
            wall_seconds,
            error: None,
        };
        match out {
            Ok((plan, status, Some(bound))) => {
                t.status = Some(status);
                t.bound = Some(bound);
                t.num_agg_edges = plan.agg_edges.len();
                welfares.push(bound);
                if best.as_ref().map_or(true, |(_, b, _)| bound < *b) {
                    best = Some((trial_index, bound, plan));
                }
            }
            Ok((plan, status, None)) => {
                t.status = Some(status);
                t.num_agg_edges = plan.agg_edges.len();
                t.error = Some(format!("coarse solve ended {status} without a bound"));
            }
            Err(e) => t.error = Some(e.to_string()),
        }
        trials.push(t);
    }
    let Some((best_trial, best_bound, best_plan)) = best else {
        return Err(Error::LevelFailed {
            level: 0,
            diagnostics: trials.iter().filter_map(|t| t.error.clone()).collect(),
        });
    };
    let summary = summarize(&welfares).expect("at least one bound");
    Ok(UpperBoundStats {
        partitions,
        trials,
        welfares,
        best: best_bound,
        best_trial,
        mean: summary.mean,
        sd: summary.sd,
        ci95: summary.ci95,
        best_plan,
    })
}
