#[path = "support/clustering.rs"]
mod checks;

#[test]
fn moment_matching_kmeans_finds_the_best_two_partition() {
    checks::moment_matching_kmeans_finds_the_best_two_partition();
}

#[test]
fn objective_never_increases() {
    checks::objective_never_increases();
}

#[test]
fn davis_dhillon_recovers_separated_groups() {
    checks::davis_dhillon_recovers_separated_groups();
}

#[test]
fn mining_matches_enumeration() {
    checks::mining_matches_enumeration();
}

#[test]
fn knn_with_identity_embedding_matches_reference() {
    checks::knn_with_identity_embedding_matches_reference();
}
