#[path = "support/gradients.rs"]
mod checks;

#[test]
fn deep_bregman_gradient() {
    checks::deep_bregman_gradient();
}

#[test]
fn moment_matching_gradient() {
    checks::moment_matching_gradient();
}

#[test]
fn contrastive_loss_gradient() {
    checks::contrastive_loss_gradient();
}

#[test]
fn triplet_loss_gradient() {
    checks::triplet_loss_gradient();
}
