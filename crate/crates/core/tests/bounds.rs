use gsc_core::coarsening::{lift_check, upper_bound_run, CoarsePlan};
use gsc_core::generator::{generate, random_feasible_allocation, GenConfig};
use gsc_core::milp::{extract_allocation, formulate_full, solve, SolverParams};
use gsc_core::model::{check_feasibility, SupplyChainInstance};
use gsc_core::sampling::{lower_bound_run, sample_edges};
use gsc_core::MicrolpBackend;
use proptest::prelude::*;

fn optimum(inst: &SupplyChainInstance) -> f64 {
    let prob = formulate_full(inst).unwrap();
    let res = solve(&prob, &SolverParams::default(), &MicrolpBackend).unwrap();
    res.objective.expect("generated instances are feasible")
}

fn eps(phi: f64) -> f64 {
    1e-5 * (1.0 + phi.abs())
}

prop_compose! {
    fn small_config()(
        nodes in 2usize..10,
        products in 1usize..4,
        technologies in 0usize..3,
        suppliers in 1usize..5,
        consumers in 1usize..5,
        seed in any::<u64>(),
    ) -> GenConfig {
        GenConfig { nodes, products, technologies, suppliers, consumers, seed, ..Default::default() }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn bounds_sandwich_the_optimum(cfg in small_config(), frac in 0.0f64..1.0, part_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let inst = generate(&cfg).unwrap();
        let phi = optimum(&inst);
        let a = (frac * inst.num_edges() as f64) as usize;
        let c = 1 + (part_frac * (inst.num_nodes() - 1) as f64) as usize;
        let params = SolverParams::default();
        let lb = lower_bound_run(&inst, a, 3, &params, &MicrolpBackend, seed).unwrap();
        let ub = upper_bound_run(&inst, c, 3, &params, &MicrolpBackend, seed).unwrap();
        for w in &lb.welfares {
            prop_assert!(*w <= phi + eps(phi), "draw {w} above optimum {phi}");
        }
        for w in &ub.welfares {
            prop_assert!(*w >= phi - eps(phi), "trial {w} below optimum {phi}");
        }
    }

    #[test]
    fn full_sample_is_exact(cfg in small_config(), seed in any::<u64>()) {
        let inst = generate(&cfg).unwrap();
        let phi = optimum(&inst);
        let lb = lower_bound_run(&inst, inst.num_edges(), 2, &SolverParams::default(), &MicrolpBackend, seed).unwrap();
        prop_assert!((lb.best - phi).abs() <= eps(phi));
        prop_assert!(lb.sd <= eps(phi));
    }

    #[test]
    fn one_partition_per_node_is_exact(cfg in small_config(), seed in any::<u64>()) {
        let inst = generate(&cfg).unwrap();
        prop_assert!(inst.has_unique_edges());
        let phi = optimum(&inst);
        let ub = upper_bound_run(&inst, inst.num_nodes(), 2, &SolverParams::default(), &MicrolpBackend, seed).unwrap();
        prop_assert!((ub.best - phi).abs() <= eps(phi));
    }

    #[test]
    fn feasible_allocations_lift(cfg in small_config(), c_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let inst = generate(&cfg).unwrap();
        let c = 1 + (c_frac * (inst.num_nodes() - 1) as f64) as usize;
        let plan = CoarsePlan::build(&inst, c, seed).unwrap();
        let alloc = random_feasible_allocation(&inst, seed, &SolverParams::default(), &MicrolpBackend).unwrap();
        prop_assert!(check_feasibility(&inst, &alloc, 1e-7).unwrap().is_feasible());
        let report = lift_check(&inst, &plan, &alloc, 1e-7).unwrap();
        prop_assert!(report.passed(), "{:?}", report.violations);
        prop_assert!(report.coarse_welfare >= report.full_welfare - 1e-7 * (1.0 + report.full_welfare.abs()));
    }

    #[test]
    fn samples_are_nested_prefixes(cfg in small_config(), a in 0usize..40, extra in 0usize..40, seed in any::<u64>()) {
        let inst = generate(&cfg).unwrap();
        let m = inst.num_edges();
        let (a, b) = (a.min(m), (a + extra).min(m));
        let small = sample_edges(&inst, a, seed).unwrap();
        let large = sample_edges(&inst, b, seed).unwrap();
        prop_assert_eq!(small.active.len(), a);
        prop_assert!(small.active.iter().all(|l| large.active.binary_search(l).is_ok()));
        prop_assert_eq!(small.active.len() + small.removed.len(), m);
    }
}

#[test]
fn sampled_welfare_matches_lifted_allocation() {
    let inst = generate(&GenConfig { nodes: 12, products: 2, technologies: 2, seed: 8, ..Default::default() }).unwrap();
    let lb = lower_bound_run(&inst, inst.num_edges() / 3, 4, &SolverParams::default(), &MicrolpBackend, 1).unwrap();
    let alloc = &lb.best_allocation;
    assert!(check_feasibility(&inst, alloc, 1e-7).unwrap().is_feasible());
    assert!((gsc_core::evaluate_welfare(&inst, alloc).unwrap() - lb.best).abs() < 1e-9 * (1.0 + lb.best.abs()));
    for d in &lb.draws {
        assert!(d.error.is_none());
    }
}

#[test]
fn optimal_solution_lifts_to_every_plan() {
    let inst = generate(&GenConfig { nodes: 10, products: 3, technologies: 3, seed: 2, ..Default::default() }).unwrap();
    let prob = formulate_full(&inst).unwrap();
    let res = solve(&prob, &SolverParams::default(), &MicrolpBackend).unwrap();
    let alloc = extract_allocation(&inst, &prob, &res).unwrap();
    for c in 1..=inst.num_nodes() {
        for seed in 0..3 {
            let plan = CoarsePlan::build(&inst, c, seed).unwrap();
            let r = lift_check(&inst, &plan, &alloc, 1e-7).unwrap();
            assert!(r.passed(), "C = {c}: {:?}", r.violations);
        }
    }
}
