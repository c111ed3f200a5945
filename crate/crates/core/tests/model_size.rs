use gsc_core::coarsening::{formulate_coarse, CoarsePlan};
use gsc_core::generator::{generate, GenConfig};
use gsc_core::milp::formulate_full;
use gsc_core::sampling::{formulate_sampled, sample_edges};

#[test]
fn full_model_counts_follow_entity_counts() {
    for (nodes, products, technologies, seed) in [(5, 1, 0, 1), (8, 2, 1, 2), (12, 3, 3, 3), (20, 3, 2, 4)] {
        let cfg = GenConfig { nodes, products, technologies, suppliers: 6, consumers: 7, seed, ..Default::default() };
        let inst = generate(&cfg).unwrap();
        let (s, d, l, t) = (
            inst.suppliers().len(),
            inst.consumers().len(),
            inst.num_edges(),
            inst.technologies().len(),
        );
        let prob = formulate_full(&inst).unwrap();
        assert_eq!(prob.num_continuous(), s + d + l + t);
        assert_eq!(prob.num_integer(), t);
        assert_eq!(prob.num_equalities(), nodes * products);
        assert_eq!(prob.num_inequalities(), t);
        assert_eq!(l, products * nodes * (nodes - 1));
    }
}

#[test]
fn restricted_and_coarse_counts() {
    let inst = generate(&GenConfig { nodes: 15, products: 2, technologies: 2, seed: 6, ..Default::default() }).unwrap();
    let (s, d, t) = (inst.suppliers().len(), inst.consumers().len(), inst.technologies().len());
    let sample = sample_edges(&inst, 37, 0).unwrap();
    let prob = formulate_sampled(&inst, &sample).unwrap();
    assert_eq!(prob.num_continuous(), s + d + 37 + t);
    assert_eq!(prob.num_equalities(), 15 * 2);

    let plan = CoarsePlan::build(&inst, 4, 0).unwrap();
    let prob = formulate_coarse(&inst, &plan).unwrap();
    assert_eq!(prob.num_continuous(), s + d + plan.agg_edges.len() + t);
    assert_eq!(prob.num_equalities(), 4 * 2);
    assert_eq!(prob.num_inequalities(), t);
    // Complete graph: every ordered partition pair per product.
    assert_eq!(plan.agg_edges.len(), 2 * 4 * 3);
}
