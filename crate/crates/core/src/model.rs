//! Supply-chain problem data, derived index tables, welfare evaluation and
//! feasibility checking of candidate allocations.
//!
//! All entities are addressed by dense integer ids (`0..len`). Names are kept
//! only as metadata. An instance is immutable once built; use
//! [`SupplyChainInstance::into_parts`] to edit and rebuild.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSite {
    pub id: usize,
    pub coord: [f64; 2],
}

impl NodeSite {
    pub fn distance(&self, other: &NodeSite) -> f64 {
        let dx = self.coord[0] - other.coord[0];
        let dy = self.coord[1] - other.coord[1];
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supplier {
    pub id: usize,
    pub node: usize,
    pub product: usize,
    pub capacity: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consumer {
    pub id: usize,
    pub node: usize,
    pub product: usize,
    pub capacity: f64,
    /// Bid per unit of demand served.
    pub value: f64,
}

/// A processing technology. `yields` is sparse: products not listed have a
/// yield of zero. Negative yields are consumed, positive yields generated,
/// per unit of the reference product processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Technology {
    pub id: usize,
    pub node: usize,
    pub ref_product: usize,
    pub yields: Vec<(usize, f64)>,
    /// Reference-product throughput per installed facility.
    pub unit_capacity: f64,
    pub max_facilities: u32,
    pub op_cost: f64,
    pub install_cost: f64,
}

impl Technology {
    pub fn yield_of(&self, product: usize) -> f64 {
        self.yields
            .iter()
            .filter(|(p, _)| *p == product)
            .map(|(_, g)| *g)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportEdge {
    pub id: usize,
    pub src: usize,
    pub dst: usize,
    pub product: usize,
    pub capacity: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceFlags {
    /// At most one edge per `(src, dst, product)`. Checked by validation.
    pub unique_edges: bool,
    /// Permit `src == dst` edges. They cancel in the nodal balance and only
    /// exist to mirror edge counts that include the diagonal.
    pub self_loops: bool,
}

/// Raw participant lists. Build a [`SupplyChainInstance`] from it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceParts {
    pub products: Vec<Product>,
    pub nodes: Vec<NodeSite>,
    pub suppliers: Vec<Supplier>,
    pub consumers: Vec<Consumer>,
    pub technologies: Vec<Technology>,
    pub edges: Vec<TransportEdge>,
    pub flags: InstanceFlags,
}

/// Derived lookup tables keyed by `(node, product)` or node.
///
/// Entries referring to out-of-range ids are skipped so that malformed data
/// can still be loaded and reported by [`validate_instance`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTables {
    num_products: usize,
    suppliers_at: Vec<Vec<usize>>,
    consumers_at: Vec<Vec<usize>>,
    techs_at: Vec<Vec<usize>>,
    edges_in: Vec<Vec<usize>>,
    edges_out: Vec<Vec<usize>>,
}

impl IndexTables {
    pub fn build(parts: &InstanceParts) -> Self {
        let np = parts.products.len();
        let nn = parts.nodes.len();
        let cells = nn * np;
        let in_range = |n: usize, p: usize| n < nn && p < np;
        let mut t = IndexTables {
            num_products: np,
            suppliers_at: vec![Vec::new(); cells],
            consumers_at: vec![Vec::new(); cells],
            techs_at: vec![Vec::new(); nn],
            edges_in: vec![Vec::new(); cells],
            edges_out: vec![Vec::new(); cells],
        };
        for (i, s) in parts.suppliers.iter().enumerate() {
            if in_range(s.node, s.product) {
                t.suppliers_at[s.node * np + s.product].push(i);
            }
        }
        for (j, c) in parts.consumers.iter().enumerate() {
            if in_range(c.node, c.product) {
                t.consumers_at[c.node * np + c.product].push(j);
            }
        }
        for (k, tech) in parts.technologies.iter().enumerate() {
            if tech.node < nn {
                t.techs_at[tech.node].push(k);
            }
        }
        for (l, e) in parts.edges.iter().enumerate() {
            if in_range(e.src, e.product) && in_range(e.dst, e.product) {
                t.edges_out[e.src * np + e.product].push(l);
                t.edges_in[e.dst * np + e.product].push(l);
            }
        }
        t
    }

    fn cell(&self, node: usize, product: usize) -> usize {
        node * self.num_products + product
    }

    pub fn suppliers_at(&self, node: usize, product: usize) -> &[usize] {
        &self.suppliers_at[self.cell(node, product)]
    }

    pub fn consumers_at(&self, node: usize, product: usize) -> &[usize] {
        &self.consumers_at[self.cell(node, product)]
    }

    pub fn techs_at(&self, node: usize) -> &[usize] {
        &self.techs_at[node]
    }

    pub fn edges_in(&self, node: usize, product: usize) -> &[usize] {
        &self.edges_in[self.cell(node, product)]
    }

    pub fn edges_out(&self, node: usize, product: usize) -> &[usize] {
        &self.edges_out[self.cell(node, product)]
    }
}

/// The full problem data together with its derived index tables.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyChainInstance {
    parts: InstanceParts,
    index: IndexTables,
}

impl SupplyChainInstance {
    pub fn from_parts(parts: InstanceParts) -> Self {
        let index = IndexTables::build(&parts);
        SupplyChainInstance { parts, index }
    }

    /// Builds the instance and rejects it if [`validate_instance`] reports
    /// anything.
    pub fn validated(parts: InstanceParts) -> Result<Self> {
        let inst = Self::from_parts(parts);
        let violations = validate_instance(&inst);
        if violations.is_empty() {
            Ok(inst)
        } else {
            Err(Error::InvalidInstance(violations))
        }
    }

    pub fn parts(&self) -> &InstanceParts {
        &self.parts
    }

    pub fn into_parts(self) -> InstanceParts {
        self.parts
    }

    pub fn index(&self) -> &IndexTables {
        &self.index
    }

    pub fn products(&self) -> &[Product] {
        &self.parts.products
    }

    pub fn nodes(&self) -> &[NodeSite] {
        &self.parts.nodes
    }

    pub fn suppliers(&self) -> &[Supplier] {
        &self.parts.suppliers
    }

    pub fn consumers(&self) -> &[Consumer] {
        &self.parts.consumers
    }

    pub fn technologies(&self) -> &[Technology] {
        &self.parts.technologies
    }

    pub fn edges(&self) -> &[TransportEdge] {
        &self.parts.edges
    }

    pub fn flags(&self) -> InstanceFlags {
        self.parts.flags
    }

    pub fn num_products(&self) -> usize {
        self.parts.products.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.parts.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.parts.edges.len()
    }

    /// True when no two edges share `(src, dst, product)`.
    pub fn has_unique_edges(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.parts.edges.len());
        self.parts
            .edges
            .iter()
            .all(|e| seen.insert((e.src, e.dst, e.product)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityRef {
    Instance,
    Product(usize),
    Node(usize),
    Supplier(usize),
    Consumer(usize),
    Technology(usize),
    Edge(usize),
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityRef::Instance => write!(f, "instance"),
            EntityRef::Product(i) => write!(f, "product {i}"),
            EntityRef::Node(i) => write!(f, "node {i}"),
            EntityRef::Supplier(i) => write!(f, "supplier {i}"),
            EntityRef::Consumer(i) => write!(f, "consumer {i}"),
            EntityRef::Technology(i) => write!(f, "technology {i}"),
            EntityRef::Edge(i) => write!(f, "edge {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Rule {
    /// Entity id differs from its position in the list.
    NonContiguousId { found: usize },
    NegativeCapacity,
    NegativeCost,
    NonFinite { field: String },
    UnknownNode { node: usize },
    UnknownProduct { product: usize },
    SelfLoop,
    DuplicateEdge { first: usize },
    ZeroReferenceYield,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::NonContiguousId { found } => write!(f, "id {found} breaks the contiguous 0..n range"),
            Rule::NegativeCapacity => write!(f, "negative capacity"),
            Rule::NegativeCost => write!(f, "negative cost"),
            Rule::NonFinite { field } => write!(f, "non-finite {field}"),
            Rule::UnknownNode { node } => write!(f, "unknown node {node}"),
            Rule::UnknownProduct { product } => write!(f, "unknown product {product}"),
            Rule::SelfLoop => write!(f, "self-loop edge"),
            Rule::DuplicateEdge { first } => {
                write!(f, "duplicate (src, dst, product) of edge {first} with unique_edges set")
            }
            Rule::ZeroReferenceYield => write!(f, "reference product has zero yield"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub entity: EntityRef,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

struct Checker<'a> {
    nodes: usize,
    products: usize,
    out: &'a mut Vec<Violation>,
}

impl Checker<'_> {
    fn push(&mut self, entity: EntityRef, rule: Rule) {
        self.out.push(Violation { entity, rule });
    }

    fn id(&mut self, entity: EntityRef, pos: usize, id: usize) {
        if pos != id {
            self.push(entity, Rule::NonContiguousId { found: id });
        }
    }

    fn node(&mut self, entity: EntityRef, node: usize) {
        if node >= self.nodes {
            self.push(entity, Rule::UnknownNode { node });
        }
    }

    fn product(&mut self, entity: EntityRef, product: usize) {
        if product >= self.products {
            self.push(entity, Rule::UnknownProduct { product });
        }
    }

    fn nonneg(&mut self, entity: EntityRef, field: &str, v: f64, rule: Rule) {
        if !v.is_finite() && !(field.ends_with("capacity") && v == f64::INFINITY) {
            self.push(entity, Rule::NonFinite { field: field.to_string() });
        } else if v < 0.0 {
            self.push(entity, rule);
        }
    }
}

/// Lists every broken invariant. An empty list means the instance is valid.
pub fn validate_instance(inst: &SupplyChainInstance) -> Vec<Violation> {
    let parts = inst.parts();
    let mut out = Vec::new();
    let mut ck = Checker {
        nodes: parts.nodes.len(),
        products: parts.products.len(),
        out: &mut out,
    };

    for (pos, p) in parts.products.iter().enumerate() {
        ck.id(EntityRef::Product(pos), pos, p.id);
    }
    for (pos, n) in parts.nodes.iter().enumerate() {
        let e = EntityRef::Node(pos);
        ck.id(e, pos, n.id);
        if !n.coord.iter().all(|c| c.is_finite()) {
            ck.push(e, Rule::NonFinite { field: "coord".into() });
        }
    }
    for (pos, s) in parts.suppliers.iter().enumerate() {
        let e = EntityRef::Supplier(pos);
        ck.id(e, pos, s.id);
        ck.node(e, s.node);
        ck.product(e, s.product);
        ck.nonneg(e, "capacity", s.capacity, Rule::NegativeCapacity);
        ck.nonneg(e, "cost", s.cost, Rule::NegativeCost);
    }
    for (pos, c) in parts.consumers.iter().enumerate() {
        let e = EntityRef::Consumer(pos);
        ck.id(e, pos, c.id);
        ck.node(e, c.node);
        ck.product(e, c.product);
        ck.nonneg(e, "capacity", c.capacity, Rule::NegativeCapacity);
        ck.nonneg(e, "value", c.value, Rule::NegativeCost);
    }
    for (pos, t) in parts.technologies.iter().enumerate() {
        let e = EntityRef::Technology(pos);
        ck.id(e, pos, t.id);
        ck.node(e, t.node);
        ck.product(e, t.ref_product);
        for &(p, g) in &t.yields {
            ck.product(e, p);
            if !g.is_finite() {
                ck.push(e, Rule::NonFinite { field: "yield".into() });
            }
        }
        if t.yield_of(t.ref_product) == 0.0 {
            ck.push(e, Rule::ZeroReferenceYield);
        }
        ck.nonneg(e, "unit_capacity", t.unit_capacity, Rule::NegativeCapacity);
        ck.nonneg(e, "op_cost", t.op_cost, Rule::NegativeCost);
        ck.nonneg(e, "install_cost", t.install_cost, Rule::NegativeCost);
    }
    let mut first_seen = std::collections::HashMap::new();
    for (pos, l) in parts.edges.iter().enumerate() {
        let e = EntityRef::Edge(pos);
        ck.id(e, pos, l.id);
        ck.node(e, l.src);
        ck.node(e, l.dst);
        ck.product(e, l.product);
        if l.src == l.dst && !parts.flags.self_loops {
            ck.push(e, Rule::SelfLoop);
        }
        ck.nonneg(e, "capacity", l.capacity, Rule::NegativeCapacity);
        ck.nonneg(e, "cost", l.cost, Rule::NegativeCost);
        if parts.flags.unique_edges {
            if let Some(&first) = first_seen.get(&(l.src, l.dst, l.product)) {
                ck.push(e, Rule::DuplicateEdge { first });
            } else {
                first_seen.insert((l.src, l.dst, l.product), pos);
            }
        }
    }
    out
}

/// A candidate decision vector and its welfare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub s: Vec<f64>,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
    pub xi: Vec<f64>,
    pub y: Vec<u32>,
    pub welfare: f64,
}

impl Allocation {
    /// The trivial all-zero allocation, feasible for every instance.
    pub fn zero(inst: &SupplyChainInstance) -> Self {
        Allocation {
            s: vec![0.0; inst.suppliers().len()],
            d: vec![0.0; inst.consumers().len()],
            f: vec![0.0; inst.num_edges()],
            xi: vec![0.0; inst.technologies().len()],
            y: vec![0; inst.technologies().len()],
            welfare: 0.0,
        }
    }

    /// Scales every continuous field by `factor`, keeping `y`, and
    /// re-evaluates the welfare.
    pub fn scaled(&self, inst: &SupplyChainInstance, factor: f64) -> Result<Self> {
        let scale = |v: &[f64]| v.iter().map(|x| x * factor).collect::<Vec<_>>();
        let mut out = Allocation {
            s: scale(&self.s),
            d: scale(&self.d),
            f: scale(&self.f),
            xi: scale(&self.xi),
            y: self.y.clone(),
            welfare: 0.0,
        };
        out.welfare = evaluate_welfare(inst, &out)?;
        Ok(out)
    }

    pub fn check_dims(&self, inst: &SupplyChainInstance) -> Result<()> {
        let checks = [
            ("supply flows", inst.suppliers().len(), self.s.len()),
            ("demand flows", inst.consumers().len(), self.d.len()),
            ("edge flows", inst.num_edges(), self.f.len()),
            ("processed amounts", inst.technologies().len(), self.xi.len()),
            ("installed counts", inst.technologies().len(), self.y.len()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch { what, expected, found });
            }
        }
        Ok(())
    }
}

fn dot(a: impl Iterator<Item = f64>, b: &[f64]) -> f64 {
    a.zip(b).map(|(x, y)| x * y).sum()
}

/// Total welfare: demand value served minus supply, transport, processing and
/// installation costs.
pub fn evaluate_welfare(inst: &SupplyChainInstance, alloc: &Allocation) -> Result<f64> {
    alloc.check_dims(inst)?;
    let techs = inst.technologies();
    let value = dot(inst.consumers().iter().map(|c| c.value), &alloc.d);
    let supply = dot(inst.suppliers().iter().map(|s| s.cost), &alloc.s);
    let transport = dot(inst.edges().iter().map(|e| e.cost), &alloc.f);
    let process = dot(techs.iter().map(|t| t.op_cost), &alloc.xi);
    let install: f64 = techs
        .iter()
        .zip(&alloc.y)
        .map(|(t, &y)| t.install_cost * f64::from(y))
        .sum();
    Ok(value - supply - transport - process - install)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowKind {
    Supply,
    Demand,
    Flow,
    Process,
    Build,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConstraintViolation {
    /// Nodal product balance is off by `residual` (inflow minus outflow).
    Balance {
        node: usize,
        product: usize,
        residual: f64,
        allowed: f64,
    },
    Bound {
        kind: FlowKind,
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    /// Processed amount exceeds installed facilities times unit capacity.
    TechCapacity { tech: usize, xi: f64, limit: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub violations: Vec<ConstraintViolation>,
    pub max_balance_residual: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Signed inflow-minus-outflow of every `(node, product)` balance row, plus
/// the magnitude scale of each row (largest of total inflow and outflow).
pub fn balance_residuals(inst: &SupplyChainInstance, alloc: &Allocation) -> Result<Vec<(f64, f64)>> {
    alloc.check_dims(inst)?;
    let np = inst.num_products();
    let mut inflow = vec![0.0; inst.num_nodes() * np];
    let mut outflow = vec![0.0; inst.num_nodes() * np];
    for (s, v) in inst.suppliers().iter().zip(&alloc.s) {
        inflow[s.node * np + s.product] += v;
    }
    for (c, v) in inst.consumers().iter().zip(&alloc.d) {
        outflow[c.node * np + c.product] += v;
    }
    for (e, v) in inst.edges().iter().zip(&alloc.f) {
        inflow[e.dst * np + e.product] += v;
        outflow[e.src * np + e.product] += v;
    }
    for (t, xi) in inst.technologies().iter().zip(&alloc.xi) {
        for &(p, g) in &t.yields {
            let amount = g * xi;
            if amount >= 0.0 {
                inflow[t.node * np + p] += amount;
            } else {
                outflow[t.node * np + p] -= amount;
            }
        }
    }
    Ok(inflow
        .into_iter()
        .zip(outflow)
        .map(|(i, o)| (i - o, i.max(o)))
        .collect())
}

fn bound_check(
    out: &mut Vec<ConstraintViolation>,
    kind: FlowKind,
    values: &[f64],
    upper: impl Iterator<Item = f64>,
    tol: f64,
) {
    for (index, (&value, upper)) in values.iter().zip(upper).enumerate() {
        let slack = tol * (1.0 + upper.abs().min(value.abs()));
        if !value.is_finite() || value < -slack || value > upper + slack {
            out.push(ConstraintViolation::Bound {
                kind,
                index,
                value,
                lower: 0.0,
                upper,
            });
        }
    }
}

/// Checks nodal balances, variable bounds and technology capacities.
///
/// Balance rows may be off by `tol * (1 + scale)` where `scale` is the larger
/// of the row's total inflow and outflow.
pub fn check_feasibility(
    inst: &SupplyChainInstance,
    alloc: &Allocation,
    tol: f64,
) -> Result<FeasibilityReport> {
    let residuals = balance_residuals(inst, alloc)?;
    let np = inst.num_products().max(1);
    let mut violations = Vec::new();
    let mut max_res: f64 = 0.0;
    for (cell, &(r, scale)) in residuals.iter().enumerate() {
        max_res = max_res.max(r.abs());
        let allowed = tol * (1.0 + scale);
        if !(r.abs() <= allowed) {
            violations.push(ConstraintViolation::Balance {
                node: cell / np,
                product: cell % np,
                residual: r,
                allowed,
            });
        }
    }
    bound_check(
        &mut violations,
        FlowKind::Supply,
        &alloc.s,
        inst.suppliers().iter().map(|s| s.capacity),
        tol,
    );
    bound_check(
        &mut violations,
        FlowKind::Demand,
        &alloc.d,
        inst.consumers().iter().map(|c| c.capacity),
        tol,
    );
    bound_check(
        &mut violations,
        FlowKind::Flow,
        &alloc.f,
        inst.edges().iter().map(|e| e.capacity),
        tol,
    );
    for (index, (t, &y)) in inst.technologies().iter().zip(&alloc.y).enumerate() {
        if y > t.max_facilities {
            violations.push(ConstraintViolation::Bound {
                kind: FlowKind::Build,
                index,
                value: f64::from(y),
                lower: 0.0,
                upper: f64::from(t.max_facilities),
            });
        }
        let xi = alloc.xi[index];
        let limit = f64::from(y) * t.unit_capacity;
        let slack = tol * (1.0 + limit.abs());
        if !xi.is_finite() || xi < -slack {
            violations.push(ConstraintViolation::Bound {
                kind: FlowKind::Process,
                index,
                value: xi,
                lower: 0.0,
                upper: limit,
            });
        } else if xi > limit + slack {
            violations.push(ConstraintViolation::TechCapacity { tech: index, xi, limit });
        }
    }
    Ok(FeasibilityReport {
        violations,
        max_balance_residual: max_res,
    })
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn toy_is_valid() {
        assert!(validate_instance(&toy()).is_empty());
        assert!(validate_instance(&tech_chain()).is_empty());
    }

    #[test]
    fn self_loop_is_reported() {
        let mut parts = toy().into_parts();
        parts.edges[0].dst = 0;
        let v = validate_instance(&SupplyChainInstance::from_parts(parts));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].entity, EntityRef::Edge(0));
        assert_eq!(v[0].rule, Rule::SelfLoop);
    }

    #[test]
    fn self_loop_allowed_by_flag() {
        let mut parts = toy().into_parts();
        parts.edges[0].dst = 0;
        parts.flags.self_loops = true;
        assert!(validate_instance(&SupplyChainInstance::from_parts(parts)).is_empty());
    }

    #[test]
    fn negative_capacity_is_reported() {
        let mut parts = toy().into_parts();
        parts.suppliers[0].capacity = -1.0;
        let v = validate_instance(&SupplyChainInstance::from_parts(parts));
        assert_eq!(
            v,
            vec![Violation { entity: EntityRef::Supplier(0), rule: Rule::NegativeCapacity }]
        );
    }

    #[test]
    fn duplicate_edges_only_matter_with_flag() {
        let mut parts = toy().into_parts();
        let mut dup = parts.edges[0].clone();
        dup.id = 1;
        dup.cost = 3.0;
        parts.edges.push(dup);
        let inst = SupplyChainInstance::from_parts(parts.clone());
        assert!(!inst.has_unique_edges());
        assert_eq!(validate_instance(&inst)[0].rule, Rule::DuplicateEdge { first: 0 });
        parts.flags.unique_edges = false;
        assert!(validate_instance(&SupplyChainInstance::from_parts(parts)).is_empty());
    }

    #[test]
    fn unknown_references_are_reported() {
        let mut parts = toy().into_parts();
        parts.consumers[0].node = 9;
        parts.technologies.push(Technology {
            id: 0,
            node: 0,
            ref_product: 0,
            yields: vec![(3, 1.0)],
            unit_capacity: 1.0,
            max_facilities: 1,
            op_cost: 0.0,
            install_cost: 0.0,
        });
        let v = validate_instance(&SupplyChainInstance::from_parts(parts));
        let rules: Vec<_> = v.iter().map(|v| v.rule.clone()).collect();
        assert!(rules.contains(&Rule::UnknownNode { node: 9 }));
        assert!(rules.contains(&Rule::UnknownProduct { product: 3 }));
        assert!(rules.contains(&Rule::ZeroReferenceYield));
    }

    #[test]
    fn index_rebuild_is_idempotent() {
        let inst = tech_chain();
        assert_eq!(IndexTables::build(inst.parts()), *inst.index());
        let again = SupplyChainInstance::from_parts(inst.clone().into_parts());
        assert_eq!(again, inst);
    }

    #[test]
    fn welfare_examples() {
        let inst = toy();
        let mut a = Allocation::zero(&inst);
        assert_eq!(evaluate_welfare(&inst, &a).unwrap(), 0.0);
        a.d[0] = 5.0;
        assert_eq!(evaluate_welfare(&inst, &a).unwrap(), 50.0);
        a.s[0] = 5.0;
        a.f[0] = 5.0;
        assert_eq!(evaluate_welfare(&inst, &a).unwrap(), 35.0);
    }

    #[test]
    fn welfare_dimension_mismatch() {
        let inst = toy();
        let mut a = Allocation::zero(&inst);
        a.f.push(1.0);
        assert!(matches!(
            evaluate_welfare(&inst, &a),
            Err(Error::DimensionMismatch { what: "edge flows", expected: 1, found: 2 })
        ));
    }

    #[test]
    fn zero_allocation_is_feasible() {
        for inst in [toy(), tech_chain()] {
            let r = check_feasibility(&inst, &Allocation::zero(&inst), 1e-9).unwrap();
            assert!(r.is_feasible());
        }
    }

    #[test]
    fn stranded_supply_breaks_balance() {
        let inst = toy();
        let mut a = Allocation::zero(&inst);
        a.s[0] = 5.0;
        let r = check_feasibility(&inst, &a, 1e-9).unwrap();
        assert_eq!(r.violations.len(), 1);
        match &r.violations[0] {
            ConstraintViolation::Balance { node, product, residual, .. } => {
                assert_eq!((*node, *product), (0, 0));
                assert_eq!(*residual, 5.0);
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn processing_without_facility_is_infeasible() {
        let inst = tech_chain();
        let mut a = Allocation::zero(&inst);
        a.s[0] = 3.0;
        a.xi[0] = 3.0;
        a.d[0] = 1.5;
        let r = check_feasibility(&inst, &a, 1e-9).unwrap();
        assert_eq!(
            r.violations,
            vec![ConstraintViolation::TechCapacity { tech: 0, xi: 3.0, limit: 0.0 }]
        );
        a.y[0] = 1;
        assert!(check_feasibility(&inst, &a, 1e-9).unwrap().is_feasible());
    }

    #[test]
    fn too_many_facilities_is_infeasible() {
        let inst = tech_chain();
        let mut a = Allocation::zero(&inst);
        a.y[0] = 4;
        let r = check_feasibility(&inst, &a, 1e-9).unwrap();
        assert!(matches!(r.violations[0], ConstraintViolation::Bound { kind: FlowKind::Build, .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn welfare_is_linear_in_continuous_fields(
                s in 0.0..25.0f64, xi in 0.0..30.0f64, d in 0.0..100.0f64, k in 0.0..10.0f64
            ) {
                let inst = tech_chain();
                let a = Allocation { s: vec![s], d: vec![d], f: vec![], xi: vec![xi], y: vec![0], welfare: 0.0 };
                let base = evaluate_welfare(&inst, &a).unwrap();
                let scaled = a.scaled(&inst, k).unwrap();
                prop_assert!((scaled.welfare - k * base).abs() <= 1e-9 * (1.0 + (k * base).abs()));
            }
        }
    }
}
