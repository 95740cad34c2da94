mod common;

#[test]
fn analytic_gradients_match_central_differences() {
    let (worst, skipped) = common::gradient_check(100, 21);
    assert!(skipped < 50, "{skipped} kink points");
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}
