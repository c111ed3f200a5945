//! On-disk formats.
//!
//! An instance bundle is a directory of CSV tables plus a `manifest.toml`.
//! Floats are written in shortest round-trip form, so reading a written
//! bundle reproduces every numeric field bit for bit. Reports and plans are
//! JSON documents.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarsening::CoarsePlan;
use crate::driver::{format_gap, BoundReport, StopReason};
use crate::error::{Error, Result};
use crate::milp::{SolveResult, SolveStatus, SolverParams};
use crate::model::{
    Allocation, Consumer, InstanceFlags, InstanceParts, NodeSite, Product, Supplier, SupplyChainInstance,
    Technology, TransportEdge,
};
use crate::sampling::SamplingMode;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub unique_edges: bool,
    #[serde(default)]
    pub self_loops: bool,
    #[serde(default)]
    pub counts: Option<Counts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub nodes: usize,
    pub products: usize,
    pub suppliers: usize,
    pub consumers: usize,
    pub technologies: usize,
    pub edges: usize,
}

#[derive(Serialize, Deserialize)]
struct NodeRow {
    id: usize,
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct TechRow {
    id: usize,
    node: usize,
    ref_product: usize,
    unit_capacity: f64,
    max_facilities: u32,
    op_cost: f64,
    install_cost: f64,
}

#[derive(Serialize, Deserialize)]
struct YieldRow {
    tech: usize,
    product: usize,
    gamma: f64,
}

fn write_table<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_table<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let path = dir.join(name);
    let mut r = csv::Reader::from_path(&path)?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

/// Writes `inst` as a bundle directory, creating it if needed.
pub fn write_bundle(inst: &SupplyChainInstance, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let flags = inst.flags();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        unique_edges: flags.unique_edges,
        self_loops: flags.self_loops,
        counts: Some(Counts {
            nodes: inst.num_nodes(),
            products: inst.num_products(),
            suppliers: inst.suppliers().len(),
            consumers: inst.consumers().len(),
            technologies: inst.technologies().len(),
            edges: inst.num_edges(),
        }),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join(MANIFEST), text)?;
    write_table(dir, "nodes.csv", inst.nodes().iter().map(|n| NodeRow { id: n.id, x: n.coord[0], y: n.coord[1] }))?;
    write_table(dir, "products.csv", inst.products())?;
    write_table(dir, "suppliers.csv", inst.suppliers())?;
    write_table(dir, "consumers.csv", inst.consumers())?;
    write_table(
        dir,
        "technologies.csv",
        inst.technologies().iter().map(|t| TechRow {
            id: t.id,
            node: t.node,
            ref_product: t.ref_product,
            unit_capacity: t.unit_capacity,
            max_facilities: t.max_facilities,
            op_cost: t.op_cost,
            install_cost: t.install_cost,
        }),
    )?;
    write_table(
        dir,
        "yields.csv",
        inst.technologies()
            .iter()
            .flat_map(|t| t.yields.iter().map(move |&(product, gamma)| YieldRow { tech: t.id, product, gamma })),
    )?;
    write_table(dir, "edges.csv", inst.edges())?;
    Ok(())
}

/// Reads a bundle and validates it.
pub fn read_bundle(dir: &Path) -> Result<SupplyChainInstance> {
    SupplyChainInstance::validated(read_bundle_parts(dir)?)
}

/// Reads a bundle without validating it, so that every violation can be
/// reported instead of failing the load.
pub fn read_bundle_unchecked(dir: &Path) -> Result<SupplyChainInstance> {
    Ok(SupplyChainInstance::from_parts(read_bundle_parts(dir)?))
}

fn read_bundle_parts(dir: &Path) -> Result<InstanceParts> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "bundle format version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let nodes = read_table::<NodeRow>(dir, "nodes.csv")?
        .into_iter()
        .map(|r| NodeSite { id: r.id, coord: [r.x, r.y] })
        .collect();
    let mut technologies: Vec<Technology> = read_table::<TechRow>(dir, "technologies.csv")?
        .into_iter()
        .map(|r| Technology {
            id: r.id,
            node: r.node,
            ref_product: r.ref_product,
            yields: Vec::new(),
            unit_capacity: r.unit_capacity,
            max_facilities: r.max_facilities,
            op_cost: r.op_cost,
            install_cost: r.install_cost,
        })
        .collect();
    for y in read_table::<YieldRow>(dir, "yields.csv")? {
        let tech = technologies
            .iter_mut()
            .find(|t| t.id == y.tech)
            .ok_or_else(|| Error::Parse(format!("yield row refers to unknown technology {}", y.tech)))?;
        tech.yields.push((y.product, y.gamma));
    }
    let parts = InstanceParts {
        products: read_table::<Product>(dir, "products.csv")?,
        nodes,
        suppliers: read_table::<Supplier>(dir, "suppliers.csv")?,
        consumers: read_table::<Consumer>(dir, "consumers.csv")?,
        technologies,
        edges: read_table::<TransportEdge>(dir, "edges.csv")?,
        flags: InstanceFlags { unique_edges: manifest.unique_edges, self_loops: manifest.self_loops },
    };
    if let Some(c) = manifest.counts {
        let found = [
            ("nodes", c.nodes, parts.nodes.len()),
            ("products", c.products, parts.products.len()),
            ("suppliers", c.suppliers, parts.suppliers.len()),
            ("consumers", c.consumers, parts.consumers.len()),
            ("technologies", c.technologies, parts.technologies.len()),
            ("edges", c.edges, parts.edges.len()),
        ];
        if let Some((what, expected, found)) = found.into_iter().find(|(_, e, f)| e != f) {
            return Err(Error::DimensionMismatch { what, expected, found });
        }
    }
    Ok(parts)
}

/// SHA-256 of the instance's canonical JSON encoding.
pub fn instance_digest(inst: &SupplyChainInstance) -> String {
    let bytes = serde_json::to_vec(inst.parts()).expect("instance data serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format_version: u32,
    pub tool_version: String,
    pub command: String,
    pub instance: Option<String>,
    pub instance_digest: String,
    pub seed: u64,
    pub levels: String,
    pub gap_tol: Option<f64>,
    pub time_budget: Option<f64>,
    pub threads: usize,
    pub sampling: SamplingMode,
    pub solver: SolverParams,
    pub backend: String,
}

/// One row per level, with the envelope bounds the gap is computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub level: usize,
    pub edges: usize,
    pub partitions: usize,
    pub draws: usize,
    pub avg_solve_seconds: f64,
    pub best_lb: f64,
    pub mean_lb: f64,
    pub sd_lb: f64,
    pub ci95_lb: Option<f64>,
    pub failed_lb: usize,
    pub best_ub: f64,
    pub mean_ub: f64,
    pub sd_ub: f64,
    pub ci95_ub: Option<f64>,
    pub failed_ub: usize,
    pub level_gap: f64,
    pub envelope_lb: f64,
    pub envelope_ub: f64,
    pub gap: f64,
    pub gap_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub best_lb: f64,
    pub best_ub: f64,
    pub gap: f64,
    pub gap_text: String,
    pub stop: StopReason,
    pub lb_seconds: f64,
    pub ub_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub provenance: Provenance,
    pub rows: Vec<ReportRow>,
    pub summary: ReportSummary,
}

impl ReportDocument {
    pub fn from_report(report: &BoundReport, provenance: Provenance) -> Self {
        let rows = report
            .levels
            .iter()
            .map(|l| {
                let solves = l.lower.draws.len() + l.upper.trials.len();
                let secs: f64 = l.lower.draws.iter().map(|d| d.wall_seconds).sum::<f64>()
                    + l.upper.trials.iter().map(|t| t.wall_seconds).sum::<f64>();
                ReportRow {
                    level: l.level,
                    edges: l.spec.edges,
                    partitions: l.spec.partitions,
                    draws: l.spec.draws,
                    avg_solve_seconds: secs / solves.max(1) as f64,
                    best_lb: l.lower.best,
                    mean_lb: l.lower.mean,
                    sd_lb: l.lower.sd,
                    ci95_lb: l.lower.ci95,
                    failed_lb: l.lower.failures().count(),
                    best_ub: l.upper.best,
                    mean_ub: l.upper.mean,
                    sd_ub: l.upper.sd,
                    ci95_ub: l.upper.ci95,
                    failed_ub: l.upper.failures().count(),
                    level_gap: l.level_gap,
                    envelope_lb: l.envelope_lb,
                    envelope_ub: l.envelope_ub,
                    gap: l.gap,
                    gap_text: format_gap(l.gap),
                }
            })
            .collect();
        ReportDocument {
            provenance,
            rows,
            summary: ReportSummary {
                best_lb: report.best_lb,
                best_ub: report.best_ub,
                gap: report.gap,
                gap_text: format_gap(report.gap),
                stop: report.stop,
                lb_seconds: report.lb_seconds,
                ub_seconds: report.ub_seconds,
            },
        }
    }

    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut doc = self.clone();
        for r in &mut doc.rows {
            r.avg_solve_seconds = 0.0;
        }
        doc.summary.lb_seconds = 0.0;
        doc.summary.ub_seconds = 0.0;
        doc
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fixed-width table with one line per level.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>5} {:>9} {:>10} {:>16} {:>12} {:>6} {:>16} {:>12} {:>8}\n",
            "level", "edges", "avg_sec", "best_lb", "sd_lb", "parts", "best_ub", "sd_ub", "gap"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:>5} {:>9} {:>10.3} {:>16.2} {:>12.2} {:>6} {:>16.2} {:>12.2} {:>8}\n",
                r.level, r.edges, r.avg_solve_seconds, r.best_lb, r.sd_lb, r.partitions, r.best_ub, r.sd_ub, r.gap_text
            ));
        }
        out
    }
}

/// Output of a direct solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub status: SolveStatus,
    pub welfare: Option<f64>,
    pub best_bound: Option<f64>,
    pub mip_gap: Option<f64>,
    pub wall_seconds: f64,
    pub instance_digest: String,
    pub solver: SolverParams,
    pub backend: String,
    pub allocation: Option<Allocation>,
}

impl SolutionDocument {
    pub fn new(
        inst: &SupplyChainInstance,
        res: &SolveResult,
        allocation: Option<Allocation>,
        solver: SolverParams,
        backend: &str,
    ) -> Self {
        SolutionDocument {
            status: res.status,
            welfare: allocation.as_ref().map(|a| a.welfare),
            best_bound: res.best_bound,
            mip_gap: res.mip_gap,
            wall_seconds: res.wall_seconds,
            instance_digest: instance_digest(inst),
            solver,
            backend: backend.to_string(),
            allocation,
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_plan(plan: &CoarsePlan, path: &Path) -> Result<()> {
    write_json(plan, path)
}

pub fn read_plan(path: &Path) -> Result<CoarsePlan> {
    read_json(path)
}
