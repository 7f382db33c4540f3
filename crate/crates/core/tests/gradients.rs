//! Finite-difference gradient checks for every differentiable tape op.

mod common;

use common::{worst_error, OPS, TOLERANCE};

fn assert_op(name: &str) {
    let op = OPS.iter().find(|o| o.name == name).expect("known op");
    let worst = worst_error(op).unwrap();
    assert!(worst < TOLERANCE, "{name}: worst relative error {worst:.3e}");
}

#[test]
fn conv2d() {
    assert_op("conv2d");
}

#[test]
fn maxpool2d() {
    assert_op("maxpool2d");
}

#[test]
fn dense() {
    assert_op("dense");
}

#[test]
fn activations() {
    for name in ["elu", "sigmoid", "leaky_relu"] {
        assert_op(name);
    }
}

#[test]
fn batchnorm_training_mode() {
    assert_op("batchnorm2d");
}

#[test]
fn basic_ops() {
    assert_op("basic");
}

#[test]
fn global_avg_pool() {
    assert_op("global_avg_pool");
}

#[test]
fn film() {
    assert_op("film");
}

#[test]
fn tps_solve_and_grid() {
    assert_op("tps_solve");
    assert_op("tps_grid");
}

#[test]
fn bilinear_sample() {
    assert_op("bilinear_sample");
}

#[test]
fn soft_dice() {
    assert_op("soft_dice");
}

#[test]
fn smoothness() {
    assert_op("smoothness");
}

#[test]
fn locnet_loss() {
    assert_op("locnet_loss");
}

#[test]
fn gather_anchors() {
    assert_op("gather_anchors");
}
