use gsc_wasm::Demo;
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn layout_lists_every_entity() {
    let demo = Demo::build(12, 2, 1, 5).unwrap();
    let v = parse(&demo.layout());
    assert_eq!(v["nodes"].as_array().unwrap().len(), 12);
    assert_eq!(v["edges"].as_array().unwrap().len(), 2 * 12 * 11);
    assert_eq!(v["products"], 2);
}

#[test]
fn plan_view_matches_partition_count() {
    let demo = Demo::build(15, 1, 0, 2).unwrap();
    let v = parse(&demo.plan(4, 9).unwrap());
    assert_eq!(v["pivots"].as_array().unwrap().len(), 4);
    let parts = v["partition_of"].as_array().unwrap();
    assert!(parts.iter().all(|p| p.as_u64().unwrap() < 4));
    let local = v["local_edges"].as_u64().unwrap();
    let global = v["global_edges"].as_u64().unwrap();
    assert_eq!(local + global, 15 * 14);
    assert!(demo.plan(16, 0).is_err());
}

#[test]
fn sample_view_has_requested_size() {
    let demo = Demo::build(10, 1, 0, 1).unwrap();
    assert_eq!(parse(&demo.sample(17, 3).unwrap()).as_array().unwrap().len(), 17);
    assert!(demo.sample(1000, 3).is_err());
}

#[test]
fn run_view_brackets_the_optimum() {
    let demo = Demo::build(10, 2, 1, 4).unwrap();
    let v = parse(&demo.run("20:2:3,max:max:1", 1, true).unwrap());
    let opt = v["optimum"].as_f64().unwrap();
    for level in v["levels"].as_array().unwrap() {
        let (lb, ub) = (level["best_lb"].as_f64().unwrap(), level["best_ub"].as_f64().unwrap());
        assert!(lb <= opt + 1e-6 && opt <= ub + 1e-6);
    }
    assert_eq!(v["levels"][1]["gap_text"], "0%");
    assert!(Demo::build(0, 1, 0, 0).is_err());
}
