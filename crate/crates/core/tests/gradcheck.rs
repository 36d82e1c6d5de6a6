//! Finite-difference checks of every differentiable operation.

mod common;

use common::grad::{self, assert_within_tolerance};

#[test]
fn elementwise_and_reduction_ops() {
    assert_within_tolerance(&grad::elementwise());
}

#[test]
fn shape_ops() {
    assert_within_tolerance(&grad::shape_ops());
}

#[test]
fn matmul_and_linear() {
    assert_within_tolerance(&grad::dense());
}

#[test]
fn convolutions_over_random_geometries() {
    let probes = grad::convolutions();
    assert!(probes.len() >= 20);
    assert_within_tolerance(&probes);
}

#[test]
fn losses() {
    assert_within_tolerance(&grad::losses());
}

#[test]
fn network_parameters_including_the_frozen_prior_path() {
    assert_within_tolerance(&grad::networks());
}
