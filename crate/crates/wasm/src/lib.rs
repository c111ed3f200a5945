//! Browser bindings for the demo page in `www/`.
//!
//! A [`Demo`] owns one generated instance. The page asks it for the layout,
//! for a coarse plan or edge sample to draw over the layout, and for a full
//! level schedule. Results cross the boundary as JSON strings.

use gsc_core::coarsening::CoarsePlan;
use gsc_core::driver::{format_gap, resolve_levels, run_gsc, GscConfig};
use gsc_core::generator::{generate, GenConfig};
use gsc_core::milp::{formulate_full, solve, SolverParams};
use gsc_core::model::SupplyChainInstance;
use gsc_core::sampling::sample_edges;
use gsc_core::MicrolpBackend;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Layout {
    nodes: Vec<[f64; 2]>,
    /// `[src, dst, product]` per edge.
    edges: Vec<[usize; 3]>,
    suppliers: Vec<usize>,
    consumers: Vec<usize>,
    technologies: Vec<usize>,
    products: usize,
}

#[derive(Serialize)]
struct PlanView {
    pivots: Vec<usize>,
    partition_of: Vec<usize>,
    /// `[src partition, dst partition, product, member count]`.
    agg_edges: Vec<[usize; 4]>,
    local_edges: usize,
    global_edges: usize,
}

#[derive(Serialize)]
struct LevelView {
    spec: String,
    best_lb: f64,
    sd_lb: f64,
    best_ub: f64,
    sd_ub: f64,
    gap: f64,
    gap_text: String,
}

#[derive(Serialize)]
struct RunView {
    optimum: Option<f64>,
    levels: Vec<LevelView>,
}

#[wasm_bindgen]
pub struct Demo {
    inst: SupplyChainInstance,
}

impl Demo {
    pub fn build(nodes: usize, products: usize, technologies: usize, seed: u64) -> Result<Demo, String> {
        let cfg = GenConfig { nodes, products, technologies, seed, ..Default::default() };
        let inst = generate(&cfg).map_err(|e| e.to_string())?;
        Ok(Demo { inst })
    }

    pub fn layout(&self) -> String {
        let i = &self.inst;
        let layout = Layout {
            nodes: i.nodes().iter().map(|n| n.coord).collect(),
            edges: i.edges().iter().map(|e| [e.src, e.dst, e.product]).collect(),
            suppliers: i.suppliers().iter().map(|s| s.node).collect(),
            consumers: i.consumers().iter().map(|c| c.node).collect(),
            technologies: i.technologies().iter().map(|t| t.node).collect(),
            products: i.num_products(),
        };
        serde_json::to_string(&layout).expect("layout serializes")
    }

    pub fn plan(&self, partitions: usize, seed: u64) -> Result<String, String> {
        let plan = CoarsePlan::build(&self.inst, partitions, seed).map_err(|e| e.to_string())?;
        let view = PlanView {
            agg_edges: plan.agg_edges.iter().map(|a| [a.src_part, a.dst_part, a.product, a.members.len()]).collect(),
            local_edges: plan.local_edges.len(),
            global_edges: plan.global_edges.len(),
            pivots: plan.pivots,
            partition_of: plan.partition_of,
        };
        Ok(serde_json::to_string(&view).expect("plan serializes"))
    }

    pub fn sample(&self, edges: usize, seed: u64) -> Result<String, String> {
        let s = sample_edges(&self.inst, edges, seed).map_err(|e| e.to_string())?;
        Ok(serde_json::to_string(&s.active).expect("sample serializes"))
    }

    /// Runs `levels` and, when `with_optimum` is set, also solves the full
    /// model for reference.
    pub fn run(&self, levels: &str, seed: u64, with_optimum: bool) -> Result<String, String> {
        let params = SolverParams::default();
        let specs = resolve_levels(levels, &self.inst).map_err(|e| e.to_string())?;
        let report = run_gsc(&self.inst, &GscConfig::new(specs, seed), &params, &MicrolpBackend)
            .map_err(|e| e.to_string())?;
        let optimum = if with_optimum {
            let prob = formulate_full(&self.inst).map_err(|e| e.to_string())?;
            solve(&prob, &params, &MicrolpBackend).map_err(|e| e.to_string())?.objective
        } else {
            None
        };
        let levels = report
            .levels
            .iter()
            .map(|l| LevelView {
                spec: l.spec.to_string(),
                best_lb: l.lower.best,
                sd_lb: l.lower.sd,
                best_ub: l.upper.best,
                sd_ub: l.upper.sd,
                gap: l.gap,
                gap_text: format_gap(l.gap),
            })
            .collect();
        Ok(serde_json::to_string(&RunView { optimum, levels }).expect("run serializes"))
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(nodes: usize, products: usize, technologies: usize, seed: u32) -> Result<Demo, JsValue> {
        Demo::build(nodes, products, technologies, u64::from(seed)).map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen(js_name = layoutJson)]
    pub fn layout_json(&self) -> String {
        self.layout()
    }

    #[wasm_bindgen(js_name = planJson)]
    pub fn plan_json(&self, partitions: usize, seed: u32) -> Result<String, JsValue> {
        self.plan(partitions, u64::from(seed)).map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen(js_name = sampleJson)]
    pub fn sample_json(&self, edges: usize, seed: u32) -> Result<String, JsValue> {
        self.sample(edges, u64::from(seed)).map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen(js_name = runJson)]
    pub fn run_json(&self, levels: &str, seed: u32, with_optimum: bool) -> Result<String, JsValue> {
        self.run(levels, u64::from(seed), with_optimum).map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen(js_name = numEdges)]
    pub fn num_edges(&self) -> usize {
        self.inst.num_edges()
    }

    #[wasm_bindgen(js_name = numNodes)]
    pub fn num_nodes(&self) -> usize {
        self.inst.num_nodes()
    }
}
