use viewgrid_core::registry::{registry, DEFAULT_STEP, DEFAULT_TOL};

#[test]
fn every_registered_op_matches_finite_differences() {
    let cases = registry(7).unwrap();
    assert!(cases.len() >= 10);
    let mut failures = Vec::new();
    for case in &cases {
        let report = case.check(DEFAULT_STEP, DEFAULT_TOL).unwrap();
        println!("{:<32} {:.3e}", case.name, report.max_rel_error());
        if !report.passed() {
            failures.push((case.name.clone(), report.max_rel_error()));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn corrupted_backward_is_caught() {
    let case = registry(7).unwrap().into_iter().find(|c| c.name == "rotation").unwrap();
    let report = case.corrupted(1.5).check(DEFAULT_STEP, DEFAULT_TOL).unwrap();
    assert!(!report.passed());
}
