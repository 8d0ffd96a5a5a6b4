//! Randomized equivalence against the snapshot-deep-copy reference model.

mod common;

use common::run_sequence;

#[test]
fn randomized_sequences_match_reference_model() {
    for seed in [1, 2, 3] {
        run_sequence(seed, 400, 100);
    }
}

#[test]
fn long_sequence_matches_reference_model() {
    run_sequence(42, 1000, 250);
}
