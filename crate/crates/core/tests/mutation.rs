use helfrich_core::curvature::set_sign_mutation;
use helfrich_core::validation::run_all;

#[test]
fn flipped_mean_curvature_sign_is_detected() {
    set_sign_mutation(true);
    let outcomes = run_all(&[1, 2, 4]);
    set_sign_mutation(false);
    assert!(!outcomes[0].passed, "{}", outcomes[0].line());
    assert!(outcomes[1].passed, "{}", outcomes[1].line());
    assert!(!outcomes[2].passed, "{}", outcomes[2].line());
    assert!(run_all(&[1, 4]).iter().all(|o| o.passed));
}
