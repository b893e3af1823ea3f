#[path = "support/oracles.rs"]
mod oracles;

use oracles::*;

const N: usize = 1000;

#[test]
fn iou_matches_cell_counting() {
    assert_eq!(iou_mismatches(N, 1), 0);
}

#[test]
fn idf1_matches_exhaustive_identity_matching() {
    assert_eq!(idf1_mismatches(N, 2), 0);
}

#[test]
fn peaks_match_run_length_rule() {
    assert_eq!(peak_mismatches(N, 3), 0);
}

#[test]
fn three_vertex_grouping_matches_replay() {
    assert_eq!(grouping_mismatches(N, 4), 0);
}

#[test]
fn assignment_matches_enumeration() {
    assert_eq!(hungarian_mismatches(N, 5), 0);
}

#[test]
fn peak_reference_examples() {
    assert_eq!(brute_peaks(&[0.1, 0.6, 0.2], 0.5), vec![1]);
    assert_eq!(brute_peaks(&[0.7, 0.7, 0.1], 0.5), vec![0]);
}
