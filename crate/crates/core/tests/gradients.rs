//! Analytic gradients through the fold against central finite differences.

mod common;

use common::{dense, max_relative_error, randomize_controllers, rng, toy_net, uniform, Groups, TOLERANCE};
use ddn::dynnet::DynamicNetwork;
use ddn::numerics::Activation;

#[test]
fn two_expert_nets_match_finite_differences() {
    for seed in 0..5 {
        let net = toy_net(seed, 2, 4);
        let mut r = rng(100 + seed);
        let input = uniform(vec![3, 2, 6, 6], &mut r, 1.0);
        let groups = vec![(uniform(vec![4], &mut r, 1.0), vec![0, 1, 2])];
        let err = max_relative_error(&net, &input, &[0, 2, 1], &groups);
        assert!(err <= TOLERANCE, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn split_batches_with_distinct_embeddings_match_finite_differences() {
    let net = toy_net(7, 2, 3);
    let mut r = rng(8);
    let input = uniform(vec![4, 2, 6, 6], &mut r, 1.0);
    let groups = vec![
        (uniform(vec![3], &mut r, 1.0), vec![2, 0]),
        (uniform(vec![3], &mut r, 1.0), vec![3, 1]),
    ];
    let err = max_relative_error(&net, &input, &[1, 0, 2, 2], &groups);
    assert!(err <= TOLERANCE, "relative error {err:e}");
}

#[test]
fn per_sample_conditioning_matches_finite_differences() {
    let net = toy_net(9, 3, 2);
    let mut r = rng(10);
    let input = uniform(vec![3, 2, 6, 6], &mut r, 1.0);
    let groups: Groups = (0..3).map(|i| (uniform(vec![2], &mut r, 1.0), vec![i])).collect();
    let err = max_relative_error(&net, &input, &[2, 2, 0], &groups);
    assert!(err <= TOLERANCE, "relative error {err:e}");
}

#[test]
fn dynamic_dense_layers_match_finite_differences() {
    let specs = vec![dense(5, 6, Activation::Relu), dense(6, 3, Activation::Identity)];
    let mut r = rng(11);
    let mut net = DynamicNetwork::init_with(vec![5], &specs, &[true, true], 2, 3, &mut r).unwrap();
    randomize_controllers(&mut net, &mut r, 1.5);
    let input = uniform(vec![4, 5], &mut r, 1.0);
    let groups = vec![(uniform(vec![3], &mut r, 1.0), vec![0, 1, 2, 3])];
    let err = max_relative_error(&net, &input, &[0, 1, 2, 0], &groups);
    assert!(err <= TOLERANCE, "relative error {err:e}");
}

#[test]
fn single_expert_static_head_matches_finite_differences() {
    let net = toy_net(12, 1, 2);
    let mut r = rng(13);
    let input = uniform(vec![2, 2, 6, 6], &mut r, 1.0);
    let groups = vec![(uniform(vec![2], &mut r, 1.0), vec![0, 1])];
    let err = max_relative_error(&net, &input, &[1, 0], &groups);
    assert!(err <= TOLERANCE, "relative error {err:e}");
}
