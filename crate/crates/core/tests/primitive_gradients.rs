mod common;

#[test]
fn every_primitive_matches_finite_differences() {
    let mut failures = Vec::new();
    for (i, case) in common::cases().iter().enumerate() {
        let err = common::check_case(case, 10, 100 + i as u64);
        if err >= 1e-5 {
            failures.push(format!("{}: {err:e}", case.name));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}
