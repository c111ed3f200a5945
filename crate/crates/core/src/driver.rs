//! Multi-level bounding schedule.
//!
//! Each level runs a batch of sampled (lower-bound) solves and a batch of
//! coarse (upper-bound) solves, then reports the gap between the best bounds
//! found so far. Levels are independent; their seeds depend only on the master
//! seed and the level position, so appending a level never changes earlier
//! ones.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::backend::MilpBackend;
use crate::coarsening::{upper_bound_run_threads, UpperBoundStats};
use crate::error::{Error, Result};
use crate::milp::SolverParams;
use crate::model::SupplyChainInstance;
use crate::sampling::{lower_bound_run_with, LowerBoundConfig, LowerBoundStats, SamplingMode};

/// Relative tolerance by which a lower bound may exceed an upper bound before
/// the pair is rejected as inconsistent.
pub const CROSSING_TOL: f64 = 1e-6;

/// Gap in percent of the upper bound's magnitude.
///
/// A lower bound above the upper bound by less than the crossing tolerance
/// yields a slightly negative gap; anything larger is an error.
pub fn gap(lb: f64, ub: f64) -> Result<f64> {
    if !lb.is_finite() || !ub.is_finite() {
        return Err(Error::UndefinedGap { lb, ub });
    }
    if ub == 0.0 {
        return if lb == 0.0 { Ok(0.0) } else { Err(Error::UndefinedGap { lb, ub }) };
    }
    if lb > ub + CROSSING_TOL * (1.0 + ub.abs()) {
        return Err(Error::BoundsCrossed { lb, ub });
    }
    Ok(100.0 * (ub - lb) / ub.abs())
}

/// Gaps smaller than this (in percent) print as zero; they are rounding noise
/// between two solves of the same optimum.
pub const GAP_PRINT_FLOOR: f64 = 1e-9;

/// Three significant figures, trailing zeros dropped, with a percent sign.
pub fn format_gap(pct: f64) -> String {
    if !pct.is_finite() {
        return format!("{pct}%");
    }
    if pct.abs() < GAP_PRINT_FLOOR {
        return "0%".into();
    }
    let magnitude = pct.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    let mut text = format!("{pct:.decimals$}");
    if text.contains('.') {
        text = text.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    if text == "-0" {
        text = "0".into();
    }
    format!("{text}%")
}

/// One level's size: sampled edges, partitions and independent draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub edges: usize,
    pub partitions: usize,
    pub draws: usize,
}

impl LevelSpec {
    pub fn check(&self, inst: &SupplyChainInstance) -> Result<()> {
        if self.edges > inst.num_edges() {
            return Err(Error::OutOfRange { what: "sampled edges", value: self.edges, min: 0, max: inst.num_edges() });
        }
        if self.partitions == 0 || self.partitions > inst.num_nodes() {
            return Err(Error::OutOfRange {
                what: "partitions",
                value: self.partitions,
                min: 1,
                max: inst.num_nodes(),
            });
        }
        if self.draws == 0 {
            return Err(Error::OutOfRange { what: "draws", value: 0, min: 1, max: usize::MAX });
        }
        Ok(())
    }
}

impl fmt::Display for LevelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.edges, self.partitions, self.draws)
    }
}

/// A count in a level string: a number or `max` (all edges or all nodes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Count {
    Max,
    Exactly(usize),
}

impl Count {
    fn resolve(self, max: usize) -> usize {
        match self {
            Count::Max => max,
            Count::Exactly(n) => n,
        }
    }
}

impl FromStr for Count {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("max") {
            return Ok(Count::Max);
        }
        s.replace('_', "")
            .parse()
            .map(Count::Exactly)
            .map_err(|_| Error::Parse(format!("`{s}` is neither a count nor `max`")))
    }
}

/// An unresolved level from the `edges:partitions:draws` grammar. Draws
/// default to 1 when omitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRequest {
    pub edges: Count,
    pub partitions: Count,
    pub draws: usize,
}

impl LevelRequest {
    pub fn resolve(&self, inst: &SupplyChainInstance) -> Result<LevelSpec> {
        let spec = LevelSpec {
            edges: self.edges.resolve(inst.num_edges()),
            partitions: self.partitions.resolve(inst.num_nodes()),
            draws: self.draws,
        };
        spec.check(inst)?;
        Ok(spec)
    }
}

impl FromStr for LevelRequest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split(':').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::Parse(format!("level `{s}` must look like edges:partitions[:draws]")));
        }
        let draws = match fields.get(2) {
            None => 1,
            Some(d) => match d.parse::<Count>()? {
                Count::Exactly(n) => n,
                Count::Max => return Err(Error::Parse("draw count cannot be `max`".into())),
            },
        };
        Ok(LevelRequest { edges: fields[0].parse()?, partitions: fields[1].parse()?, draws })
    }
}

/// Parses a comma-separated level list such as `10:2:10,40:4:10,max:max:1`.
pub fn parse_levels(text: &str) -> Result<Vec<LevelRequest>> {
    let levels: Vec<LevelRequest> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if levels.is_empty() {
        return Err(Error::Parse("no levels given".into()));
    }
    Ok(levels)
}

pub fn resolve_levels(text: &str, inst: &SupplyChainInstance) -> Result<Vec<LevelSpec>> {
    parse_levels(text)?.iter().map(|l| l.resolve(inst)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Lower,
    Upper,
}

/// Seed for one phase of one level. A splitmix64 finalizer over the inputs
/// keeps neighbouring levels' streams unrelated.
pub fn level_seed(master: u64, level: usize, phase: Phase) -> u64 {
    let tag = match phase {
        Phase::Lower => 0u64,
        Phase::Upper => 1,
    };
    let mut z = master
        .wrapping_add((level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GscConfig {
    pub levels: Vec<LevelSpec>,
    pub seed: u64,
    /// Stop once the envelope gap (percent) is at or below this value.
    /// `None` runs every level.
    pub gap_tol: Option<f64>,
    /// Wall-clock seconds after which no new level is started.
    pub time_budget: Option<f64>,
    pub threads: usize,
    pub sampling: SamplingMode,
}

impl GscConfig {
    pub fn new(levels: Vec<LevelSpec>, seed: u64) -> Self {
        GscConfig { levels, seed, gap_tol: None, time_budget: None, threads: 1, sampling: SamplingMode::Uniform }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    /// 1-based position in the schedule.
    pub level: usize,
    pub spec: LevelSpec,
    pub lb_seed: u64,
    pub ub_seed: u64,
    pub lower: LowerBoundStats,
    pub upper: UpperBoundStats,
    /// Gap between this level's own best bounds.
    pub level_gap: f64,
    /// Best lower bound over this and all earlier levels.
    pub envelope_lb: f64,
    /// Best upper bound over this and all earlier levels.
    pub envelope_ub: f64,
    /// Gap of the envelope bounds.
    pub gap: f64,
    pub lb_seconds: f64,
    pub ub_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Completed,
    GapTolerance,
    TimeBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub levels: Vec<LevelReport>,
    pub best_lb: f64,
    pub best_ub: f64,
    pub gap: f64,
    pub stop: StopReason,
    pub lb_seconds: f64,
    pub ub_seconds: f64,
    pub config: GscConfig,
    pub params: SolverParams,
    pub backend: String,
}

/// Runs the level schedule.
///
/// Individual failed draws or trials are recorded and skipped; a level in
/// which every draw or every trial fails aborts the run.
pub fn run_gsc(
    inst: &SupplyChainInstance,
    cfg: &GscConfig,
    params: &SolverParams,
    backend: &dyn MilpBackend,
) -> Result<BoundReport> {
    if cfg.levels.is_empty() {
        return Err(Error::InvalidConfig("the level schedule is empty".into()));
    }
    for level in &cfg.levels {
        level.check(inst)?;
    }
    if let Some(t) = cfg.gap_tol {
        if !(t >= 0.0) {
            return Err(Error::InvalidConfig(format!("gap tolerance {t} must be nonnegative")));
        }
    }
    params.check()?;

    let started = Instant::now();
    let mut levels: Vec<LevelReport> = Vec::with_capacity(cfg.levels.len());
    let mut stop = StopReason::Completed;
    let (mut lb_total, mut ub_total) = (0.0, 0.0);
    for (i, spec) in cfg.levels.iter().enumerate() {
        if let (Some(budget), false) = (cfg.time_budget, levels.is_empty()) {
            if started.elapsed().as_secs_f64() >= budget {
                stop = StopReason::TimeBudget;
                break;
            }
        }
        let report = run_level(inst, i, spec, cfg, params, backend, levels.last())?;
        lb_total += report.lb_seconds;
        ub_total += report.ub_seconds;
        let reached = cfg.gap_tol.is_some_and(|t| report.gap <= t);
        levels.push(report);
        if reached && i + 1 < cfg.levels.len() {
            stop = StopReason::GapTolerance;
            break;
        }
    }
    let last = levels.last().expect("at least one level ran");
    Ok(BoundReport {
        best_lb: last.envelope_lb,
        best_ub: last.envelope_ub,
        gap: last.gap,
        stop,
        lb_seconds: lb_total,
        ub_seconds: ub_total,
        config: cfg.clone(),
        params: *params,
        backend: backend.name().to_string(),
        levels,
    })
}

fn run_level(
    inst: &SupplyChainInstance,
    index: usize,
    spec: &LevelSpec,
    cfg: &GscConfig,
    params: &SolverParams,
    backend: &dyn MilpBackend,
    previous: Option<&LevelReport>,
) -> Result<LevelReport> {
    let level = index + 1;
    let lb_seed = level_seed(cfg.seed, index, Phase::Lower);
    let ub_seed = level_seed(cfg.seed, index, Phase::Upper);
    let lb_cfg = LowerBoundConfig {
        sample_size: spec.edges,
        num_draws: spec.draws,
        base_seed: lb_seed,
        mode: cfg.sampling,
        threads: cfg.threads,
    };
    let lower_phase = || {
        let t = Instant::now();
        let out = lower_bound_run_with(inst, &lb_cfg, params, backend);
        (out, t.elapsed().as_secs_f64())
    };
    let upper_phase = || {
        let t = Instant::now();
        let out = upper_bound_run_threads(inst, spec.partitions, spec.draws, params, backend, ub_seed, cfg.threads);
        (out, t.elapsed().as_secs_f64())
    };
    // The phases share only the immutable instance.
    let ((lower, lb_seconds), (upper, ub_seconds)) = if cfg.threads > 1 {
        std::thread::scope(|s| {
            let h = s.spawn(upper_phase);
            let l = lower_phase();
            (l, h.join().expect("upper-bound phase panicked"))
        })
    } else {
        (lower_phase(), upper_phase())
    };
    let relabel = |e: Error| match e {
        Error::LevelFailed { diagnostics, .. } => Error::LevelFailed { level, diagnostics },
        other => other,
    };
    let lower = lower.map_err(relabel)?;
    let upper = upper.map_err(relabel)?;

    let level_gap = gap(lower.best, upper.best)?;
    let (envelope_lb, envelope_ub) = match previous {
        Some(p) => (p.envelope_lb.max(lower.best), p.envelope_ub.min(upper.best)),
        None => (lower.best, upper.best),
    };
    Ok(LevelReport {
        level,
        spec: *spec,
        lb_seed,
        ub_seed,
        level_gap,
        envelope_lb,
        envelope_ub,
        gap: gap(envelope_lb, envelope_ub)?,
        lower,
        upper,
        lb_seconds,
        ub_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MicrolpBackend;
    use crate::model::fixtures::toy;

    #[test]
    fn gap_examples() {
        assert_eq!(gap(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(gap(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(gap(50.0, 100.0).unwrap(), 50.0);
        assert_eq!(gap(-150.0, -100.0).unwrap(), 50.0);
        assert!(matches!(gap(1.0, 0.0), Err(Error::UndefinedGap { .. })));
        assert!(matches!(gap(101.0, 100.0), Err(Error::BoundsCrossed { .. })));
        assert!(gap(100.0 + 1e-9, 100.0).unwrap() <= 0.0);
    }

    #[test]
    fn gap_formatting() {
        assert_eq!(format_gap(0.0), "0%");
        assert_eq!(format_gap(0.5697), "0.57%");
        assert_eq!(format_gap(40.676), "40.7%");
        assert_eq!(format_gap(7.6), "7.6%");
        assert_eq!(format_gap(77.2), "77.2%");
        assert_eq!(format_gap(1.26), "1.26%");
        assert_eq!(format_gap(100.0), "100%");
        assert_eq!(format_gap(-0.0001), "-0.0001%");
        assert_eq!(format_gap(-2.2e-14), "0%");
    }

    #[test]
    fn level_grammar() {
        let l = parse_levels("10:2:10, 40:4:10,max:max:1,5:1").unwrap();
        assert_eq!(l.len(), 4);
        assert_eq!(l[0], LevelRequest { edges: Count::Exactly(10), partitions: Count::Exactly(2), draws: 10 });
        assert_eq!(l[2], LevelRequest { edges: Count::Max, partitions: Count::Max, draws: 1 });
        assert_eq!(l[3].draws, 1);
        assert!(parse_levels("").is_err());
        assert!(parse_levels("10").is_err());
        assert!(parse_levels("a:b:c").is_err());
        assert!(parse_levels("1:1:max").is_err());
        assert!(parse_levels("1:2:3:4").is_err());
    }

    #[test]
    fn level_resolution_checks_bounds() {
        let inst = toy();
        let levels = resolve_levels("max:max:2", &inst).unwrap();
        assert_eq!(levels, vec![LevelSpec { edges: 1, partitions: 2, draws: 2 }]);
        assert!(resolve_levels("2:1:1", &inst).is_err());
        assert!(resolve_levels("1:3:1", &inst).is_err());
        assert!(resolve_levels("1:0:1", &inst).is_err());
        assert!(resolve_levels("1:1:0", &inst).is_err());
    }

    #[test]
    fn seeds_are_positional() {
        assert_ne!(level_seed(7, 0, Phase::Lower), level_seed(7, 0, Phase::Upper));
        assert_ne!(level_seed(7, 0, Phase::Lower), level_seed(7, 1, Phase::Lower));
        assert_eq!(level_seed(7, 3, Phase::Upper), level_seed(7, 3, Phase::Upper));
    }

    #[test]
    fn toy_schedule() {
        let inst = toy();
        let levels = resolve_levels("0:1:2,max:max:1", &inst).unwrap();
        let report = run_gsc(&inst, &GscConfig::new(levels, 3), &SolverParams::default(), &MicrolpBackend).unwrap();
        assert_eq!(report.levels.len(), 2);
        let first = &report.levels[0];
        assert_eq!(first.lower.best, 0.0);
        assert!((first.upper.best - 45.0).abs() < 1e-9);
        assert!((first.gap - 100.0).abs() < 1e-9);
        let second = &report.levels[1];
        assert!((second.envelope_lb - 35.0).abs() < 1e-9);
        assert!((second.envelope_ub - 35.0).abs() < 1e-9);
        assert!(report.gap.abs() < 1e-9);
        assert_eq!(report.stop, StopReason::Completed);
    }

    #[test]
    fn gap_tolerance_stops_early() {
        let inst = toy();
        let levels = resolve_levels("max:max:1,0:1:1", &inst).unwrap();
        let mut cfg = GscConfig::new(levels, 0);
        cfg.gap_tol = Some(0.0);
        let report = run_gsc(&inst, &cfg, &SolverParams::default(), &MicrolpBackend).unwrap();
        assert_eq!(report.levels.len(), 1);
        assert_eq!(report.stop, StopReason::GapTolerance);
    }

    #[test]
    fn empty_schedule_is_rejected() {
        let cfg = GscConfig::new(vec![], 0);
        assert!(run_gsc(&toy(), &cfg, &SolverParams::default(), &MicrolpBackend).is_err());
    }

    #[test]
    fn threaded_run_matches_serial() {
        let inst = toy();
        let levels = resolve_levels("1:1:3,1:2:3", &inst).unwrap();
        let mut cfg = GscConfig::new(levels, 11);
        let serial = run_gsc(&inst, &cfg, &SolverParams::default(), &MicrolpBackend).unwrap();
        cfg.threads = 4;
        let threaded = run_gsc(&inst, &cfg, &SolverParams::default(), &MicrolpBackend).unwrap();
        for (a, b) in serial.levels.iter().zip(&threaded.levels) {
            assert_eq!(a.lower.welfares, b.lower.welfares);
            assert_eq!(a.upper.welfares, b.upper.welfares);
        }
    }
}
