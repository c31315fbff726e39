#[path = "support/divergence.rs"]
mod checks;

#[test]
fn worked_two_head_example() {
    checks::worked_two_head_example();
}

#[test]
fn axioms_over_ten_thousand_draws() {
    checks::axioms_over_ten_thousand_draws();
}

#[test]
fn fubini_identity_for_embedding_kernels() {
    checks::fubini_identity_for_embedding_kernels();
}

#[test]
fn mahalanobis_kernel_reduces_to_quadratic_form() {
    checks::mahalanobis_kernel_reduces_to_quadratic_form();
}

#[test]
fn gaussian_kl_matches_monte_carlo() {
    checks::gaussian_kl_matches_monte_carlo();
}
