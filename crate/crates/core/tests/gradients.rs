mod common;

use common::suite::{check, OPS};

const TOL: f64 = 1e-4;

fn run(op: &str) {
    for i in 0..3 {
        let err = check(op, i, 2024);
        assert!(err <= TOL, "{op} instance {i}: max relative error {err:e}");
    }
}

#[test]
fn every_listed_op_is_checked() {
    assert_eq!(OPS.len(), 15);
}

#[test]
fn conv2d() {
    run("conv2d");
}

#[test]
fn bilinear_sample() {
    run("bilinear_sample");
}

#[test]
fn deform_conv2d() {
    run("deform_conv2d");
}

#[test]
fn softmax_t() {
    run("softmax_t");
}

#[test]
fn adaptive_avg_pool() {
    run("adaptive_avg_pool");
}

#[test]
fn sample_norm() {
    run("sample_norm");
}

#[test]
fn head() {
    run("head");
}

#[test]
fn dropout_with_fixed_mask() {
    run("dropout");
}

#[test]
fn tanh() {
    run("tanh");
}

#[test]
fn kl_loss() {
    run("kl_loss");
}

#[test]
fn ce_loss() {
    run("ce_loss");
}

#[test]
fn total_loss() {
    run("total_loss");
}

#[test]
fn offset_predictor() {
    run("offset_predictor");
}

#[test]
fn fusion_forward() {
    run("fusion_forward");
}

#[test]
fn model_forward_micro() {
    run("model_forward");
}
