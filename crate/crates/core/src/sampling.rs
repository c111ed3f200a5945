//! Edge-sampling restriction.
//!
//! A draw keeps `a` edges chosen uniformly without replacement and drops the
//! rest from the model. Every feasible point of the restricted model, padded
//! with zero flow on the dropped edges, is feasible for the original model, so
//! each draw's welfare is a valid lower bound on the true optimum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::backend::MilpBackend;
use crate::error::{Error, Result};
use crate::milp::{extract_allocation, formulate_with_mask, solve, MilpProblem, SolveStatus, SolverParams};
use crate::model::{check_feasibility, Allocation, SupplyChainInstance};
use crate::par::map_indexed;
use crate::stats::summarize;

/// Feasibility tolerance applied to lifted draw solutions.
pub const LIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Uniform over the whole edge set.
    #[default]
    Uniform,
    /// Equal quota per product, uniform within each product.
    Stratified,
}

/// One draw's split of the edge set into active and removed edges. Both lists
/// are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSample {
    pub active: Vec<usize>,
    pub removed: Vec<usize>,
    pub seed: u64,
    pub draw_index: usize,
}

impl EdgeSample {
    fn from_active(mut active: Vec<usize>, num_edges: usize, seed: u64) -> Self {
        active.sort_unstable();
        let mut mask = vec![false; num_edges];
        for &l in &active {
            mask[l] = true;
        }
        let removed = (0..num_edges).filter(|&l| !mask[l]).collect();
        EdgeSample { active, removed, seed, draw_index: 0 }
    }

    /// Active flag per edge id.
    pub fn mask(&self, num_edges: usize) -> Vec<bool> {
        let mut mask = vec![false; num_edges];
        for &l in &self.active {
            if l < num_edges {
                mask[l] = true;
            }
        }
        mask
    }
}

/// First `k` entries of a seeded Fisher-Yates shuffle of `items`.
///
/// Prefixes are nested: for the same seed, the first `k` picks are the same
/// whatever `k` is requested.
pub(crate) fn shuffled_prefix<R: Rng>(mut items: Vec<usize>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = items.len();
    for i in 0..k.min(n) {
        let j = rng.gen_range(i..n);
        items.swap(i, j);
    }
    items.truncate(k);
    items
}

/// Uniform sample of `a` edges without replacement. Deterministic in `seed`.
pub fn sample_edges(inst: &SupplyChainInstance, a: usize, seed: u64) -> Result<EdgeSample> {
    sample_edges_with(inst, a, seed, SamplingMode::Uniform)
}

pub fn sample_edges_with(inst: &SupplyChainInstance, a: usize, seed: u64, mode: SamplingMode) -> Result<EdgeSample> {
    let m = inst.num_edges();
    if a > m {
        return Err(Error::OutOfRange { what: "sample size", value: a, min: 0, max: m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active = match mode {
        SamplingMode::Uniform => shuffled_prefix((0..m).collect(), a, &mut rng),
        SamplingMode::Stratified => {
            let np = inst.num_products().max(1);
            let mut by_product = vec![Vec::new(); np];
            for (l, e) in inst.edges().iter().enumerate() {
                by_product[e.product.min(np - 1)].push(l);
            }
            let quotas = fill_quotas(&by_product.iter().map(Vec::len).collect::<Vec<_>>(), a);
            by_product
                .into_iter()
                .zip(quotas)
                .flat_map(|(edges, q)| shuffled_prefix(edges, q, &mut rng))
                .collect()
        }
    };
    Ok(EdgeSample::from_active(active, m, seed))
}

/// Splits `total` into per-group quotas as evenly as possible without
/// exceeding any group's size. Requires `total <= sum(sizes)`.
fn fill_quotas(sizes: &[usize], total: usize) -> Vec<usize> {
    let mut quotas = vec![0; sizes.len()];
    let mut left = total;
    loop {
        let open: Vec<usize> = (0..sizes.len()).filter(|&g| quotas[g] < sizes[g]).collect();
        if left == 0 || open.is_empty() {
            return quotas;
        }
        let share = (left / open.len()).max(1);
        for g in open {
            let add = share.min(sizes[g] - quotas[g]).min(left);
            quotas[g] += add;
            left -= add;
        }
    }
}

/// The restricted model: identical to the full model except that removed
/// edges have no flow variable.
pub fn formulate_sampled(inst: &SupplyChainInstance, sample: &EdgeSample) -> Result<MilpProblem> {
    let m = inst.num_edges();
    if sample.active.len() + sample.removed.len() != m {
        return Err(Error::SampleMismatch(format!(
            "{} active + {} removed edges, instance has {m}",
            sample.active.len(),
            sample.removed.len()
        )));
    }
    let mut seen = vec![false; m];
    for &l in sample.active.iter().chain(&sample.removed) {
        if l >= m || std::mem::replace(&mut seen[l], true) {
            return Err(Error::SampleMismatch(format!("edge {l} is out of range or listed twice")));
        }
    }
    formulate_with_mask(inst, Some(&sample.mask(m)))
}

/// Result of one restricted solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawOutcome {
    pub draw_index: usize,
    pub seed: u64,
    pub status: Option<SolveStatus>,
    pub welfare: Option<f64>,
    pub wall_seconds: f64,
    /// Failure marker; `None` for a usable draw.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundStats {
    pub sample_size: usize,
    pub draws: Vec<DrawOutcome>,
    /// Welfare of every usable draw, in draw order.
    pub welfares: Vec<f64>,
    pub best: f64,
    pub best_draw: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci95: Option<f64>,
    /// Best draw's solution in the original variable space.
    pub best_allocation: Allocation,
}

impl LowerBoundStats {
    pub fn failures(&self) -> impl Iterator<Item = &DrawOutcome> {
        self.draws.iter().filter(|d| d.error.is_some())
    }

    pub fn mean_solve_seconds(&self) -> f64 {
        let n = self.draws.len().max(1) as f64;
        self.draws.iter().map(|d| d.wall_seconds).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundConfig {
    pub sample_size: usize,
    pub num_draws: usize,
    pub base_seed: u64,
    pub mode: SamplingMode,
    pub threads: usize,
}

/// One restricted solve, lifted back to the original instance.
pub fn solve_draw(
    inst: &SupplyChainInstance,
    sample: &EdgeSample,
    params: &SolverParams,
    backend: &dyn MilpBackend,
) -> Result<(SolveStatus, Option<Allocation>)> {
    let prob = formulate_sampled(inst, sample)?;
    let res = solve(&prob, params, backend)?;
    if !res.status.has_solution() {
        return Ok((res.status, None));
    }
    let alloc = extract_allocation(inst, &prob, &res)?;
    let report = check_feasibility(inst, &alloc, LIFT_TOL)?;
    if !report.is_feasible() {
        return Err(Error::Backend {
            backend: backend.name().to_string(),
            message: format!("lifted solution violates {:?}", report.violations[0]),
        });
    }
    Ok((res.status, Some(alloc)))
}

/// Solves `num_draws` restricted models with seeds `base_seed + draw`.
pub fn lower_bound_run(
    inst: &SupplyChainInstance,
    a: usize,
    num_draws: usize,
    params: &SolverParams,
    backend: &dyn MilpBackend,
    base_seed: u64,
) -> Result<LowerBoundStats> {
    let cfg = LowerBoundConfig {
        sample_size: a,
        num_draws,
        base_seed,
        mode: SamplingMode::Uniform,
        threads: params.threads,
    };
    lower_bound_run_with(inst, &cfg, params, backend)
}

pub fn lower_bound_run_with(
    inst: &SupplyChainInstance,
    cfg: &LowerBoundConfig,
    params: &SolverParams,
    backend: &dyn MilpBackend,
) -> Result<LowerBoundStats> {
    if cfg.num_draws == 0 {
        return Err(Error::OutOfRange { what: "number of draws", value: 0, min: 1, max: usize::MAX });
    }
    let m = inst.num_edges();
    if cfg.sample_size > m {
        return Err(Error::OutOfRange { what: "sample size", value: cfg.sample_size, min: 0, max: m });
    }
    let results = map_indexed(cfg.num_draws, cfg.threads, |draw| {
        let seed = cfg.base_seed.wrapping_add(draw as u64);
        let started = Instant::now();
        let out = sample_edges_with(inst, cfg.sample_size, seed, cfg.mode)
            .and_then(|s| solve_draw(inst, &s, params, backend));
        (draw, seed, started.elapsed().as_secs_f64(), out)
    });

    let mut draws = Vec::with_capacity(results.len());
    let mut welfares = Vec::new();
    let mut best: Option<(usize, Allocation)> = None;
    for (draw_index, seed, wall_seconds, out) in results {
        let mut outcome = DrawOutcome { draw_index, seed, status: None, welfare: None, wall_seconds, error: None };
        match out {
            Ok((status, Some(alloc))) => {
                outcome.status = Some(status);
                outcome.welfare = Some(alloc.welfare);
                welfares.push(alloc.welfare);
                if best.as_ref().map_or(true, |(_, b)| alloc.welfare > b.welfare) {
                    best = Some((draw_index, alloc));
                }
            }
            Ok((status, None)) => {
                outcome.status = Some(status);
                outcome.error = Some(format!("restricted solve ended {status}"));
            }
            Err(e) => outcome.error = Some(e.to_string()),
        }
        draws.push(outcome);
    }
    let Some((best_draw, best_allocation)) = best else {
        return Err(Error::LevelFailed {
            level: 0,
            diagnostics: draws.iter().filter_map(|d| d.error.clone()).collect(),
        });
    };
    let summary = summarize(&welfares).expect("at least one welfare");
    Ok(LowerBoundStats {
        sample_size: cfg.sample_size,
        draws,
        best: best_allocation.welfare,
        best_draw,
        mean: summary.mean,
        sd: summary.sd,
        ci95: summary.ci95,
        welfares,
        best_allocation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MicrolpBackend;
    use crate::milp::formulate_full;
    use crate::model::fixtures::toy;

    #[test]
    fn full_and_empty_samples() {
        let inst = toy();
        let s = sample_edges(&inst, 1, 3).unwrap();
        assert_eq!(s.active, vec![0]);
        assert!(s.removed.is_empty());
        let s = sample_edges(&inst, 0, 3).unwrap();
        assert!(s.active.is_empty());
        assert_eq!(s.removed, vec![0]);
    }

    #[test]
    fn oversized_sample_is_rejected() {
        assert!(matches!(
            sample_edges(&toy(), 2, 0),
            Err(Error::OutOfRange { what: "sample size", value: 2, .. })
        ));
    }

    #[test]
    fn prefixes_are_nested() {
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        let small = shuffled_prefix((0..50).collect(), 7, &mut r1);
        let large = shuffled_prefix((0..50).collect(), 20, &mut r2);
        assert_eq!(small[..], large[..7]);
    }

    #[test]
    fn quotas_fill_evenly() {
        assert_eq!(fill_quotas(&[10, 10, 10], 7), vec![3, 2, 2]);
        assert_eq!(fill_quotas(&[1, 10, 10], 9), vec![1, 4, 4]);
        assert_eq!(fill_quotas(&[2, 3], 5), vec![2, 3]);
        assert_eq!(fill_quotas(&[4, 4], 0), vec![0, 0]);
    }

    #[test]
    fn full_sample_equals_full_model() {
        let inst = toy();
        let s = sample_edges(&inst, 1, 0).unwrap();
        assert_eq!(formulate_sampled(&inst, &s).unwrap(), formulate_full(&inst).unwrap());
    }

    #[test]
    fn empty_sample_keeps_only_local_activity() {
        let inst = toy();
        let s = sample_edges(&inst, 0, 0).unwrap();
        let prob = formulate_sampled(&inst, &s).unwrap();
        assert_eq!(prob.num_vars(), 2);
        let lb = lower_bound_run(&inst, 0, 2, &SolverParams::default(), &MicrolpBackend, 0).unwrap();
        assert_eq!(lb.best, 0.0);
        assert_eq!(lb.welfares, vec![0.0, 0.0]);
    }

    #[test]
    fn mismatched_sample_is_rejected() {
        let inst = toy();
        let bad = EdgeSample { active: vec![0, 0], removed: vec![], seed: 0, draw_index: 0 };
        assert!(matches!(formulate_sampled(&inst, &bad), Err(Error::SampleMismatch(_))));
        let bad = EdgeSample { active: vec![], removed: vec![], seed: 0, draw_index: 0 };
        assert!(matches!(formulate_sampled(&inst, &bad), Err(Error::SampleMismatch(_))));
    }

    #[test]
    fn toy_lower_bound_with_full_sample() {
        let lb = lower_bound_run(&toy(), 1, 3, &SolverParams::default(), &MicrolpBackend, 5).unwrap();
        assert_eq!(lb.draws.len(), 3);
        assert!(lb.welfares.iter().all(|w| (w - 35.0).abs() < 1e-9));
        assert_eq!(lb.sd, 0.0);
        assert_eq!(lb.draws[2].seed, 7);
    }

    #[test]
    fn zero_draws_is_rejected() {
        assert!(lower_bound_run(&toy(), 1, 0, &SolverParams::default(), &MicrolpBackend, 0).is_err());
    }
}
