//! Synthetic instance generation.
//!
//! Product 0 is the raw product. Technologies convert a lower-numbered
//! product into higher-numbered ones, so the conversion graph is acyclic and
//! no chain of technologies can multiply product mass in a loop. Supplier 0
//! and consumer 0 always form a profitable route for product 0, so optimal
//! welfare is strictly positive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::MilpBackend;
use crate::error::{Error, Result};
use crate::milp::{extract_allocation, formulate_full, solve, SolverParams};
use crate::model::{
    Allocation, Consumer, InstanceFlags, InstanceParts, NodeSite, Product, Supplier, SupplyChainInstance, Technology,
    TransportEdge,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeRule {
    /// Both directions between every node pair, for every product.
    AllPairs,
    /// Like `AllPairs` but only for pairs at most this far apart.
    Radius(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub nodes: usize,
    pub products: usize,
    /// Number of technology types.
    pub technologies: usize,
    /// Probability that a node hosts a given technology type. Every type is
    /// placed at least once.
    pub tech_density: f64,
    pub suppliers: usize,
    pub consumers: usize,
    pub supply_cost: (f64, f64),
    pub supply_capacity: (f64, f64),
    pub consumer_value: (f64, f64),
    pub demand_capacity: (f64, f64),
    pub edge_rule: EdgeRule,
    pub cost_per_distance: f64,
    /// Fixed transport cost per product; the last entry repeats for higher
    /// products and an empty list means zero.
    pub base_cost: Vec<f64>,
    pub edge_capacity: (f64, f64),
    pub tech_unit_capacity: (f64, f64),
    pub tech_max_facilities: u32,
    pub tech_op_cost: (f64, f64),
    pub tech_install_cost: (f64, f64),
    /// Minimum welfare per unit on the guaranteed profitable route.
    pub corridor_margin: f64,
    /// Add one `src == dst` edge per node and product, so that the edge count
    /// is `products * nodes^2` under the all-pairs rule.
    pub include_self_loops: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            nodes: 10,
            products: 1,
            technologies: 0,
            tech_density: 0.3,
            suppliers: 5,
            consumers: 5,
            supply_cost: (1.0, 3.0),
            supply_capacity: (5.0, 20.0),
            consumer_value: (4.0, 12.0),
            demand_capacity: (5.0, 20.0),
            edge_rule: EdgeRule::AllPairs,
            cost_per_distance: 2.0,
            base_cost: vec![0.1],
            edge_capacity: (5.0, 25.0),
            tech_unit_capacity: (5.0, 15.0),
            tech_max_facilities: 3,
            tech_op_cost: (0.2, 1.0),
            tech_install_cost: (2.0, 10.0),
            corridor_margin: 1.0,
            include_self_loops: false,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Two nodes, one supplier (capacity 5, cost 1) and one consumer
    /// (capacity 5, value 10) on different nodes, transport cost 2 and
    /// capacity 10. Optimal welfare is 35.
    pub fn toy() -> Self {
        GenConfig {
            nodes: 2,
            suppliers: 1,
            consumers: 1,
            supply_cost: (1.0, 1.0),
            supply_capacity: (5.0, 5.0),
            consumer_value: (10.0, 10.0),
            demand_capacity: (5.0, 5.0),
            cost_per_distance: 0.0,
            base_cost: vec![2.0],
            edge_capacity: (10.0, 10.0),
            corridor_margin: 0.0,
            ..Default::default()
        }
    }

    /// A 20-node, single-product, all-pairs network including the diagonal
    /// (400 edges), mimicking a small regional study.
    pub fn small_study(seed: u64) -> Self {
        GenConfig {
            nodes: 20,
            products: 1,
            suppliers: 8,
            consumers: 8,
            include_self_loops: true,
            seed,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.nodes == 0 {
            return bad("at least one node is required".into());
        }
        if self.products == 0 {
            return bad("at least one product is required".into());
        }
        if self.suppliers == 0 || self.consumers == 0 {
            return bad("at least one supplier and one consumer are required".into());
        }
        if !(0.0..=1.0).contains(&self.tech_density) {
            return bad(format!("tech density {} is outside [0, 1]", self.tech_density));
        }
        let ranges = [
            ("supply cost", self.supply_cost),
            ("supply capacity", self.supply_capacity),
            ("consumer value", self.consumer_value),
            ("demand capacity", self.demand_capacity),
            ("edge capacity", self.edge_capacity),
            ("tech unit capacity", self.tech_unit_capacity),
            ("tech op cost", self.tech_op_cost),
            ("tech install cost", self.tech_install_cost),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return bad(format!("{name} range [{lo}, {hi}] must be finite, nonnegative and nonempty"));
            }
        }
        let scalars = [("cost per distance", self.cost_per_distance), ("corridor margin", self.corridor_margin)];
        for (name, v) in scalars.into_iter().chain(self.base_cost.iter().map(|&c| ("base cost", c))) {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} {v} must be finite and nonnegative"));
            }
        }
        if let EdgeRule::Radius(r) = self.edge_rule {
            if !(r >= 0.0) {
                return bad(format!("radius {r} must be nonnegative"));
            }
        }
        if self.technologies > 0 && self.tech_max_facilities == 0 {
            return bad("tech max facilities must be positive".into());
        }
        Ok(())
    }

    fn base_cost_of(&self, product: usize) -> f64 {
        match self.base_cost.get(product) {
            Some(&c) => c,
            None => self.base_cost.last().copied().unwrap_or(0.0),
        }
    }
}

fn draw<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Builds a validated instance from `cfg`. Equal configs give equal
/// instances.
pub fn generate(cfg: &GenConfig) -> Result<SupplyChainInstance> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.nodes;

    let products = (0..cfg.products)
        .map(|id| Product { id, name: if id == 0 { "raw".into() } else { format!("p{id}") } })
        .collect();
    let nodes: Vec<NodeSite> = (0..n)
        .map(|id| NodeSite { id, coord: [rng.gen::<f64>(), rng.gen::<f64>()] })
        .collect();

    let mut edges = Vec::new();
    for p in 0..cfg.products {
        for src in 0..n {
            for dst in 0..n {
                let d = nodes[src].distance(&nodes[dst]);
                let keep = if src == dst {
                    cfg.include_self_loops
                } else {
                    match cfg.edge_rule {
                        EdgeRule::AllPairs => true,
                        EdgeRule::Radius(r) => d <= r,
                    }
                };
                if keep {
                    edges.push(TransportEdge {
                        id: edges.len(),
                        src,
                        dst,
                        product: p,
                        capacity: draw(&mut rng, cfg.edge_capacity),
                        cost: cfg.cost_per_distance * d + cfg.base_cost_of(p),
                    });
                }
            }
        }
    }

    let mut suppliers = Vec::with_capacity(cfg.suppliers);
    for id in 0..cfg.suppliers {
        let product = if id == 0 || rng.gen_bool(0.7) { 0 } else { rng.gen_range(0..cfg.products) };
        suppliers.push(Supplier {
            id,
            node: rng.gen_range(0..n),
            product,
            capacity: draw(&mut rng, cfg.supply_capacity),
            cost: draw(&mut rng, cfg.supply_cost),
        });
    }

    let mut consumers = Vec::with_capacity(cfg.consumers);
    for id in 0..cfg.consumers {
        let product = if id == 0 { 0 } else { rng.gen_range(0..cfg.products) };
        let node = if id == 0 && n > 1 {
            let shift = rng.gen_range(1..n);
            (suppliers[0].node + shift) % n
        } else {
            rng.gen_range(0..n)
        };
        // Converted products fetch proportionally higher bids.
        let premium = 1.0 + 0.5 * product as f64;
        consumers.push(Consumer {
            id,
            node,
            product,
            capacity: draw(&mut rng, cfg.demand_capacity),
            value: premium * draw(&mut rng, cfg.consumer_value),
        });
    }

    // Profitable route from supplier 0 to consumer 0.
    let (u, v) = (suppliers[0].node, consumers[0].node);
    if u != v {
        let existing = edges.iter().position(|e| e.src == u && e.dst == v && e.product == 0);
        let route = match existing {
            Some(l) => l,
            None => {
                edges.push(TransportEdge {
                    id: edges.len(),
                    src: u,
                    dst: v,
                    product: 0,
                    capacity: draw(&mut rng, cfg.edge_capacity),
                    cost: cfg.cost_per_distance * nodes[u].distance(&nodes[v]) + cfg.base_cost_of(0),
                });
                edges.len() - 1
            }
        };
        if edges[route].capacity <= 0.0 {
            edges[route].capacity = cfg.demand_capacity.1.max(1.0);
        }
        let floor = suppliers[0].cost + edges[route].cost + cfg.corridor_margin;
        consumers[0].value = consumers[0].value.max(floor);
    } else {
        consumers[0].value = consumers[0].value.max(suppliers[0].cost + cfg.corridor_margin);
    }
    for c in &mut consumers[..1] {
        if c.capacity <= 0.0 {
            c.capacity = 1.0;
        }
    }
    if suppliers[0].capacity <= 0.0 {
        suppliers[0].capacity = 1.0;
    }

    let mut technologies = Vec::new();
    for _ in 0..cfg.technologies {
        // With a single product there is nothing to convert into and the
        // technology is a pure sink.
        let (input, mut yields) = if cfg.products == 1 {
            (0, vec![(0, -1.0)])
        } else {
            let input = rng.gen_range(0..cfg.products - 1);
            let output = rng.gen_range(input + 1..cfg.products);
            let mut yields = vec![(input, -1.0), (output, rng.gen_range(0.4..0.9))];
            if output + 1 < cfg.products && rng.gen_bool(0.3) {
                let extra = rng.gen_range(output + 1..cfg.products);
                yields.push((extra, rng.gen_range(0.05..0.3)));
            }
            (input, yields)
        };
        yields.sort_by_key(|&(p, _)| p);
        let mut hosts: Vec<usize> = (0..n).filter(|_| rng.gen_bool(cfg.tech_density)).collect();
        if hosts.is_empty() {
            hosts.push(rng.gen_range(0..n));
        }
        for node in hosts {
            technologies.push(Technology {
                id: technologies.len(),
                node,
                ref_product: input,
                yields: yields.clone(),
                unit_capacity: draw(&mut rng, cfg.tech_unit_capacity),
                max_facilities: rng.gen_range(1..=cfg.tech_max_facilities),
                op_cost: draw(&mut rng, cfg.tech_op_cost),
                install_cost: draw(&mut rng, cfg.tech_install_cost),
            });
        }
    }

    SupplyChainInstance::validated(InstanceParts {
        products,
        nodes,
        suppliers,
        consumers,
        technologies,
        edges,
        flags: InstanceFlags { unique_edges: true, self_loops: cfg.include_self_loops },
    })
}

/// A random feasible allocation of `inst`.
///
/// The full model is solved under a random objective, which lands on a random
/// vertex of the feasible set, and the result is scaled by a random factor in
/// `[0, 1]` (keeping the build decisions). Welfare is evaluated under the
/// instance's true prices.
pub fn random_feasible_allocation(
    inst: &SupplyChainInstance,
    seed: u64,
    params: &SolverParams,
    backend: &dyn MilpBackend,
) -> Result<Allocation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = inst.parts().clone();
    for s in &mut parts.suppliers {
        s.cost = rng.gen_range(0.0..2.0);
    }
    for c in &mut parts.consumers {
        c.value = rng.gen_range(0.0..4.0);
    }
    for e in &mut parts.edges {
        e.cost = rng.gen_range(0.0..1.0);
    }
    for t in &mut parts.technologies {
        t.op_cost = rng.gen_range(0.0..1.0);
        t.install_cost = rng.gen_range(0.0..2.0);
    }
    let priced = SupplyChainInstance::from_parts(parts);
    let prob = formulate_full(&priced)?;
    let res = solve(&prob, params, backend)?;
    if !res.status.has_solution() {
        return Err(Error::NoSolution(res.status));
    }
    let alloc = extract_allocation(&priced, &prob, &res)?;
    alloc.scaled(inst, rng.gen_range(0.0..=1.0))
}

/// Products in an order where every technology's inputs precede its outputs,
/// or `None` if the conversion graph has a cycle.
pub fn product_topological_order(inst: &SupplyChainInstance) -> Option<Vec<usize>> {
    let np = inst.num_products();
    let mut succ = vec![Vec::new(); np];
    let mut indeg = vec![0usize; np];
    for t in inst.technologies() {
        for &(i, gi) in &t.yields {
            for &(o, go) in &t.yields {
                if gi < 0.0 && go > 0.0 {
                    succ[i].push(o);
                    indeg[o] += 1;
                }
            }
        }
    }
    let mut ready: Vec<usize> = (0..np).filter(|&p| indeg[p] == 0).collect();
    let mut order = Vec::with_capacity(np);
    while let Some(p) = ready.pop() {
        order.push(p);
        for &q in &succ[p] {
            indeg[q] -= 1;
            if indeg[q] == 0 {
                ready.push(q);
            }
        }
    }
    (order.len() == np).then_some(order)
}
