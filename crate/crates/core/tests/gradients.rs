#[path = "support/grad_cases.rs"]
mod grad_cases;

use grad_cases::{connector_loss_error, splitter_loss_error, worst_op_error, OPS};

const INSTANCES: usize = 20;
const TOL: f64 = 1e-3;

#[test]
fn every_op_matches_finite_differences() {
    for (i, op) in OPS.iter().enumerate() {
        let err = worst_op_error(op, INSTANCES, 100 + i as u64);
        assert!(err < TOL, "{op}: relative error {err:e}");
    }
}

#[test]
fn splitter_loss_matches_finite_differences() {
    for seed in 0..INSTANCES as u64 {
        let err = splitter_loss_error(seed);
        assert!(err < TOL, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn connector_loss_matches_finite_differences() {
    for seed in 0..INSTANCES as u64 {
        let err = connector_loss_error(seed);
        assert!(err < TOL, "seed {seed}: relative error {err:e}");
    }
}
