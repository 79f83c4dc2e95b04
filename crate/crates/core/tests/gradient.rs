mod common;

use common::gradient_case;

#[test]
fn single_block_matches_finite_differences() {
    for seed in 0..3 {
        let case = gradient_case(5, 8, 1, 5, seed);
        assert!(case.loss_gap < 1e-10, "seed {seed}: loss gap {}", case.loss_gap);
        assert!(case.relative_error < 1e-5, "seed {seed}: {}", case.relative_error);
    }
}

#[test]
fn stacked_blocks_match_finite_differences() {
    for seed in 0..3 {
        let case = gradient_case(5, 8, 2, 5, seed);
        assert!(case.loss_gap < 1e-10, "seed {seed}: loss gap {}", case.loss_gap);
        assert!(case.relative_error < 1e-5, "seed {seed}: {}", case.relative_error);
    }
}

#[test]
fn gradient_through_time_small_vocab() {
    let case = gradient_case(3, 4, 1, 3, 7);
    assert!(case.relative_error < 1e-5, "{}", case.relative_error);
}
