mod common;

use common::gradient_suite;

#[test]
fn analytic_gradients_match_central_differences() {
    for (name, report) in gradient_suite(100) {
        println!(
            "{name:<36} checked {:>6} max rel err {:.2e}",
            report.checked, report.max_rel
        );
        assert!(
            report.max_rel < 1e-4,
            "{name}: max relative error {:.3e}",
            report.max_rel
        );
    }
}
