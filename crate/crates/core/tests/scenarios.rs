use std::path::PathBuf;

use quadclimb::scenario::{report, run_scenario, Scenario};

fn all_scenarios() -> Vec<Scenario> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| std::fs::read_to_string(p).unwrap().contains("\"environment\""))
        .collect();
    files.sort();
    files.into_iter().map(|f| Scenario::load(&f).unwrap()).collect()
}

#[test]
fn shipped_scenarios_meet_their_expectations() {
    let scenarios = all_scenarios();
    assert_eq!(scenarios.len(), 6);
    let runs: Vec<_> = scenarios.iter().map(run_scenario).collect();
    for r in &runs {
        assert_eq!(r.error, None, "{}", r.name);
        let failed: Vec<_> = r.expectations.iter().filter(|e| !e.passed).collect();
        assert!(failed.is_empty(), "{}: {failed:?}", r.name);
        assert_eq!(r.pass, Some(true));
    }
    let table = report(&runs).to_table();
    assert!(table.contains("3.88"));
}

#[test]
fn reruns_serialize_identically() {
    for s in all_scenarios() {
        let a = serde_json::to_string(&run_scenario(&s)).unwrap();
        let b = serde_json::to_string(&run_scenario(&s)).unwrap();
        assert_eq!(a, b, "{}", s.name);
    }
}

#[test]
fn malformed_scenarios_are_rejected() {
    assert!(Scenario::from_json("{}").is_err());
    assert!(Scenario::from_json(r#"{"name": "x", "environment": "Nowhere"}"#).is_err());
    let mut s = all_scenarios().remove(0);
    s.inclination_deg = Some(400.0);
    assert!(s.gravity().is_err());
    s.payload_kg = -1.0;
    assert!(s.validate().is_err());
}
