//! `gsc`: generate instances, solve them directly, and run the sampling and
//! coarsening bound phases.
//!
//! Exit codes: 0 success, 1 usage or data error, 2 solver failure,
//! 3 infeasible or unbounded model.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsc_core::backend::{backend_by_name, MilpBackend, BACKEND_ENV};
use gsc_core::coarsening::{lift_check, upper_bound_run_threads, CoarsePlan};
use gsc_core::driver::{format_gap, resolve_levels, run_gsc, GscConfig, LevelSpec};
use gsc_core::generator::{generate, random_feasible_allocation, EdgeRule, GenConfig};
use gsc_core::io::{
    instance_digest, read_bundle, read_bundle_unchecked, write_bundle, write_json, write_plan, Provenance,
    ReportDocument, SolutionDocument, FORMAT_VERSION,
};
use gsc_core::milp::{extract_allocation, formulate_full, solve, SolveStatus, SolverParams};
use gsc_core::model::{validate_instance, SupplyChainInstance};
use gsc_core::sampling::{lower_bound_run_with, LowerBoundConfig, SamplingMode};
use gsc_core::{driver, Error};

mod exit {
    pub const OK: u8 = 0;
    pub const DATA: u8 = 1;
    pub const SOLVER: u8 = 2;
    pub const INFEASIBLE: u8 = 3;
}

#[derive(Parser)]
#[command(name = "gsc", version, about = "Certified bounds for supply-chain design models")]
struct Cli {
    /// Worker threads for draws and trials.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Solver backend.
    #[arg(long, global = true, env = BACKEND_ENV, default_value = "microlp")]
    backend: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance bundle.
    Gen(GenArgs),
    /// Solve the full model directly.
    Solve(SolveArgs),
    /// Run only the edge-sampling lower-bound phase of each level.
    Sample(PhaseArgs),
    /// Run only the coarsening upper-bound phase of each level.
    Coarsen(PhaseArgs),
    /// Run the full level schedule and report bounds and gaps.
    Gsc(GscArgs),
    /// Validate an instance and check that feasible allocations lift to coarse plans.
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    SmallStudy,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    products: Option<usize>,
    /// Number of technology types.
    #[arg(long)]
    technologies: Option<usize>,
    #[arg(long)]
    tech_density: Option<f64>,
    #[arg(long)]
    suppliers: Option<usize>,
    #[arg(long)]
    consumers: Option<usize>,
    /// Connect only node pairs at most this far apart (unit square).
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    cost_per_distance: Option<f64>,
    /// Add one self-loop edge per node and product.
    #[arg(long)]
    self_loops: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolverArgs {
    /// Seconds per solve.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Relative MIP gap at which a solve may stop.
    #[arg(long, default_value_t = 0.0)]
    mip_gap: f64,
}

impl SolverArgs {
    fn params(&self, threads: usize, seed: u64) -> SolverParams {
        SolverParams { time_limit: self.time_limit, mip_gap: self.mip_gap, threads, seed }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write the solution document here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the model in LP format.
    #[arg(long)]
    lp: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Comma-separated `edges:partitions:draws` levels; `max` means all edges or nodes.
    #[arg(long)]
    levels: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Uniform)]
    sampling: Mode,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PhaseArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Write the best coarse plan of the last level here (coarsen only).
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct GscArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Stop once the gap (percent) is at or below this value.
    #[arg(long)]
    gap_tol: Option<f64>,
    /// Seconds after which no new level starts.
    #[arg(long)]
    time_budget: Option<f64>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Partition count for the lift check; `max` means one per node.
    #[arg(long, default_value = "3")]
    partitions: String,
    /// Random feasible allocations to lift.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Uniform,
    Stratified,
}

impl From<Mode> for SamplingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Uniform => SamplingMode::Uniform,
            Mode::Stratified => SamplingMode::Stratified,
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NoSolution(SolveStatus::Infeasible | SolveStatus::Unbounded) => exit::INFEASIBLE,
            Error::NoSolution(_)
            | Error::Backend { .. }
            | Error::LevelFailed { .. }
            | Error::ObjectiveMismatch { .. }
            | Error::BoundsCrossed { .. } => exit::SOLVER,
            _ => exit::DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::DATA } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let backend = backend_by_name(&cli.backend)?;
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Solve(args) => cmd_solve(args, cli.threads, backend.as_ref()),
        Command::Sample(args) => cmd_phase(args, Phase::Lower, cli.threads, backend.as_ref()),
        Command::Coarsen(args) => cmd_phase(args, Phase::Upper, cli.threads, backend.as_ref()),
        Command::Gsc(args) => cmd_gsc(args, cli.threads, backend.as_ref()),
        Command::Check(args) => cmd_check(args, backend.as_ref()),
    }
}

fn cmd_gen(args: GenArgs) -> CmdResult {
    let mut cfg = match args.preset {
        Some(Preset::Toy) => GenConfig::toy(),
        Some(Preset::SmallStudy) => GenConfig::small_study(args.seed),
        None => GenConfig::default(),
    };
    cfg.seed = args.seed;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(nodes, products, technologies, tech_density, suppliers, consumers, cost_per_distance);
    if let Some(r) = args.radius {
        cfg.edge_rule = EdgeRule::Radius(r);
    }
    if args.self_loops {
        cfg.include_self_loops = true;
    }
    let inst = generate(&cfg)?;
    write_bundle(&inst, &args.out)?;
    println!(
        "wrote {}: {} nodes, {} products, {} edges, {} technologies",
        args.out.display(),
        inst.num_nodes(),
        inst.num_products(),
        inst.num_edges(),
        inst.technologies().len()
    );
    Ok(exit::OK)
}

fn load(path: &Path) -> Result<SupplyChainInstance, Failure> {
    read_bundle(path).map_err(|e| fail(exit::DATA, format!("cannot load {}: {e}", path.display())))
}

fn cmd_solve(args: SolveArgs, threads: usize, backend: &dyn MilpBackend) -> CmdResult {
    let inst = load(&args.instance)?;
    let params = args.solver.params(threads, 0);
    let prob = formulate_full(&inst)?;
    if let Some(lp) = &args.lp {
        std::fs::write(lp, prob.to_lp_string()).map_err(Error::from)?;
    }
    let res = solve(&prob, &params, backend)?;
    let alloc = if res.status.has_solution() { Some(extract_allocation(&inst, &prob, &res)?) } else { None };
    println!("status: {}", res.status);
    if let Some(a) = &alloc {
        println!("welfare: {}", a.welfare);
    }
    match res.best_bound {
        Some(b) => println!("best bound: {b}"),
        None => println!("best bound: none"),
    }
    println!("seconds: {:.3}", res.wall_seconds);
    if let Some(out) = &args.out {
        write_json(&SolutionDocument::new(&inst, &res, alloc, params, backend.name()), out)?;
    }
    Ok(match res.status {
        SolveStatus::Infeasible | SolveStatus::Unbounded => exit::INFEASIBLE,
        _ => exit::OK,
    })
}

fn provenance(
    command: &str,
    s: &ScheduleArgs,
    inst: &SupplyChainInstance,
    levels: &[LevelSpec],
    params: &SolverParams,
    backend: &dyn MilpBackend,
) -> Provenance {
    Provenance {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        instance: Some(s.instance.display().to_string()),
        instance_digest: instance_digest(inst),
        seed: s.seed,
        levels: levels.iter().map(LevelSpec::to_string).collect::<Vec<_>>().join(","),
        gap_tol: None,
        time_budget: None,
        threads: params.threads,
        sampling: s.sampling.into(),
        solver: *params,
        backend: backend.name().to_string(),
    }
}

fn cmd_gsc(args: GscArgs, threads: usize, backend: &dyn MilpBackend) -> CmdResult {
    let s = &args.schedule;
    let inst = load(&s.instance)?;
    let levels = resolve_levels(&s.levels, &inst)?;
    let params = s.solver.params(threads, s.seed);
    let cfg = GscConfig {
        gap_tol: args.gap_tol,
        time_budget: args.time_budget,
        threads,
        sampling: s.sampling.into(),
        ..GscConfig::new(levels.clone(), s.seed)
    };
    let report = run_gsc(&inst, &cfg, &params, backend)?;
    let mut prov = provenance("gsc", s, &inst, &levels, &params, backend);
    prov.gap_tol = args.gap_tol;
    prov.time_budget = args.time_budget;
    let doc = ReportDocument::from_report(&report, prov);
    print!("{}", doc.to_table());
    println!("best lb {}  best ub {}  gap {}", report.best_lb, report.best_ub, format_gap(report.gap));
    if let Some(out) = &s.out {
        write_json(&doc, out)?;
    }
    Ok(exit::OK)
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Lower,
    Upper,
}

fn cmd_phase(args: PhaseArgs, phase: Phase, threads: usize, backend: &dyn MilpBackend) -> CmdResult {
    let s = &args.schedule;
    let inst = load(&s.instance)?;
    let levels = resolve_levels(&s.levels, &inst)?;
    let params = s.solver.params(threads, s.seed);
    let mut rows = Vec::new();
    let mut last_plan: Option<CoarsePlan> = None;
    for (i, spec) in levels.iter().enumerate() {
        let relabel = |e: Error| match e {
            Error::LevelFailed { diagnostics, .. } => Error::LevelFailed { level: i + 1, diagnostics },
            other => other,
        };
        let row = match phase {
            Phase::Lower => {
                let seed = driver::level_seed(s.seed, i, driver::Phase::Lower);
                let cfg = LowerBoundConfig {
                    sample_size: spec.edges,
                    num_draws: spec.draws,
                    base_seed: seed,
                    mode: s.sampling.into(),
                    threads,
                };
                let lb = lower_bound_run_with(&inst, &cfg, &params, backend).map_err(relabel)?;
                println!(
                    "level {} edges {:>8}  best lb {:>16.4}  mean {:>16.4}  sd {:>12.4}",
                    i + 1,
                    spec.edges,
                    lb.best,
                    lb.mean,
                    lb.sd
                );
                serde_json::json!({ "level": i + 1, "spec": spec, "seed": seed, "lower": lb })
            }
            Phase::Upper => {
                let seed = driver::level_seed(s.seed, i, driver::Phase::Upper);
                let ub = upper_bound_run_threads(&inst, spec.partitions, spec.draws, &params, backend, seed, threads)
                    .map_err(relabel)?;
                println!(
                    "level {} parts {:>8}  best ub {:>16.4}  mean {:>16.4}  sd {:>12.4}",
                    i + 1,
                    spec.partitions,
                    ub.best,
                    ub.mean,
                    ub.sd
                );
                last_plan = Some(ub.best_plan.clone());
                serde_json::json!({ "level": i + 1, "spec": spec, "seed": seed, "upper": ub })
            }
        };
        rows.push(row);
    }
    let command = if phase == Phase::Lower { "sample" } else { "coarsen" };
    if let Some(out) = &s.out {
        let doc = serde_json::json!({
            "provenance": provenance(command, s, &inst, &levels, &params, backend),
            "levels": rows,
        });
        write_json(&doc, out)?;
    }
    if let (Some(path), Some(plan)) = (&args.plan, &last_plan) {
        write_plan(plan, path)?;
    }
    Ok(exit::OK)
}

fn cmd_check(args: CheckArgs, backend: &dyn MilpBackend) -> CmdResult {
    let inst = read_bundle_unchecked(&args.instance)
        .map_err(|e| fail(exit::DATA, format!("cannot load {}: {e}", args.instance.display())))?;
    let violations = validate_instance(&inst);
    if !violations.is_empty() {
        for v in &violations {
            println!("violation: {v}");
        }
        return Err(fail(exit::DATA, format!("{} validation violation(s)", violations.len())));
    }
    println!(
        "valid: {} nodes, {} products, {} edges, {} technologies, unique edges: {}",
        inst.num_nodes(),
        inst.num_products(),
        inst.num_edges(),
        inst.technologies().len(),
        inst.has_unique_edges()
    );
    // Counts above the node count are clamped so the default works on tiny instances.
    let partitions = match args.partitions.parse::<driver::Count>()? {
        driver::Count::Max => inst.num_nodes(),
        driver::Count::Exactly(0) => return Err(fail(exit::DATA, "partition count must be positive")),
        driver::Count::Exactly(c) => c.min(inst.num_nodes()),
    };
    let params = SolverParams::default();
    let mut failures = 0;
    for k in 0..args.samples {
        let seed = args.seed.wrapping_add(k as u64);
        let plan = CoarsePlan::build(&inst, partitions, seed)?;
        let alloc = random_feasible_allocation(&inst, seed, &params, backend)?;
        let report = lift_check(&inst, &plan, &alloc, 1e-7)?;
        if !report.passed() {
            failures += 1;
            println!("lift {k}: {:?}", report.violations);
        }
    }
    println!("lift checks: {} of {} passed with {partitions} partitions", args.samples - failures, args.samples);
    if failures > 0 {
        return Err(fail(exit::SOLVER, format!("{failures} lift check(s) failed")));
    }
    Ok(exit::OK)
}
