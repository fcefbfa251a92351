#![allow(dead_code)]

use std::path::Path;

use ddn::domains::{generate_dataset, partition, AttributeSchema, DatasetConfig, FeatureBank, FrozenEncoder, FEATURE_DIM};
use ddn::dynnet::{controller_alpha, DynLayer, DynamicNetwork};
use ddn::experiments::{domain_stream, ArchSpec, DatasetSpec, ExperimentConfig, FrameStream};
use ddn::numerics::{chain_shapes, forward_layer, Activation, LayerSpec, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ddn::seed::rng(seed)
}

pub fn uniform(shape: Vec<usize>, rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

pub fn conv(inp: usize, out: usize, kernel: usize, stride: usize, pad: usize, act: Activation) -> LayerSpec {
    LayerSpec::Conv {
        in_channels: inp,
        out_channels: out,
        kernel,
        stride,
        pad,
        act,
    }
}

pub fn dense(inputs: usize, outputs: usize, act: Activation) -> LayerSpec {
    LayerSpec::Dense { inputs, outputs, act }
}

/// Two-conv backbone, pooled, with a dense head. Input `[2, 6, 6]`.
pub fn toy_specs(classes: usize) -> Vec<LayerSpec> {
    vec![
        conv(2, 3, 3, 1, 1, Activation::Relu),
        conv(3, 4, 3, 2, 1, Activation::Relu),
        LayerSpec::GlobalAvgPool,
        dense(4, classes, Activation::Identity),
    ]
}

/// Randomises every controller so factors differ from 0.5.
pub fn randomize_controllers(net: &mut DynamicNetwork, rng: &mut ChaCha8Rng, scale: f64) {
    for layer in net.layers_mut() {
        if let DynLayer::Expert(e) = layer {
            for c in &mut e.controllers {
                c.weight.value.data_mut().iter_mut().for_each(|w| *w = rng.gen_range(-scale..scale));
                c.bias.value.data_mut()[0] = rng.gen_range(-scale..scale);
            }
            e.bias.value.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
}

/// Forward pass that never materialises a combined weight: each expert layer
/// runs every expert separately and mixes the pre-activations.
pub fn mixture_forward(net: &DynamicNetwork, embedding: &Tensor<f64>, input: &Tensor<f64>) -> Tensor<f64> {
    let mut x = input.clone();
    for layer in net.layers() {
        x = match layer {
            DynLayer::Static(s) => forward_layer(&s.spec, s.weights(), &x).unwrap(),
            DynLayer::Expert(e) => {
                let (linear, act) = match e.spec {
                    LayerSpec::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        pad,
                        act,
                    } => (conv(in_channels, out_channels, kernel, stride, pad, Activation::Identity), act),
                    LayerSpec::Dense { inputs, outputs, act } => (dense(inputs, outputs, Activation::Identity), act),
                    other => panic!("unexpected expert layer {other:?}"),
                };
                let zero_bias = Tensor::zeros(e.bias.value.shape().to_vec());
                let mut acc: Option<Tensor<f64>> = None;
                for (w, c) in e.experts.iter().zip(&e.controllers) {
                    let a = controller_alpha(c, embedding).unwrap();
                    let y = forward_layer(&linear, Some((&w.value, &zero_bias)), &x).unwrap();
                    match acc.as_mut() {
                        Some(t) => t.add_scaled(a, &y).unwrap(),
                        None => {
                            let mut t = y;
                            t.scale(a);
                            acc = Some(t);
                        }
                    }
                }
                let mut pre = acc.unwrap();
                let channels = e.bias.value.len();
                let per = pre.len() / pre.dim(0) / channels;
                for (i, v) in pre.data_mut().iter_mut().enumerate() {
                    *v = act.apply(*v + e.bias.value.data()[(i / per) % channels]);
                }
                pre
            }
        };
    }
    x
}

/// Small end-to-end config that trains in well under a second per model.
pub fn tiny_config(name: &str, seed: u64, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(name, seed, dir);
    cfg.dataset = DatasetSpec {
        classes: 3,
        train_per_domain: 12,
        val_per_domain: 6,
        overrides: Vec::new(),
    };
    cfg.arch = ArchSpec {
        widths: vec![4, 4],
        k: 2,
    };
    cfg.train.steps = 30;
    cfg.train.batch_size = 16;
    cfg.train.lr = 0.02;
    cfg
}

/// Random conv backbone over a random input geometry, with a dense head.
pub fn random_net(seed: u64) -> (DynamicNetwork, Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let channels = r.gen_range(1..4);
    let size = r.gen_range(4..9);
    let k = r.gen_range(1..5);
    let dim = r.gen_range(1..7);
    let width = r.gen_range(1..5);
    let mut specs = vec![conv(channels, width, 3, r.gen_range(1..3), 1, Activation::Relu)];
    let mut shape = chain_shapes(&specs, &[channels, size, size]).unwrap();
    if r.gen_bool(0.5) {
        let next = r.gen_range(1..5);
        let kernel = r.gen_range(1..4);
        specs.push(conv(width, next, kernel, 1, kernel / 2, Activation::Relu));
        shape = chain_shapes(&specs, &[channels, size, size]).unwrap();
    }
    let flat: usize = shape.iter().product();
    specs.push(LayerSpec::Flatten);
    specs.push(dense(flat, r.gen_range(2..5), Activation::Identity));
    let dense_dynamic = r.gen_bool(0.3);
    let mask: Vec<bool> = specs
        .iter()
        .map(|s| matches!(s, LayerSpec::Conv { .. }) || (dense_dynamic && matches!(s, LayerSpec::Dense { .. })))
        .collect();
    let mut net = DynamicNetwork::init_with(vec![channels, size, size], &specs, &mask, k, dim, &mut r).unwrap();
    randomize_controllers(&mut net, &mut r, 2.0);
    let emb = uniform(vec![dim], &mut r, 1.5);
    let batch = r.gen_range(1..4);
    let input = uniform(vec![batch, channels, size, size], &mut r, 1.0);
    (net, emb, input)
}

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Below this magnitude relative error is measured against the floor instead.
pub const FLOOR: f64 = 1e-6;

pub type Groups = Vec<(Tensor<f64>, Vec<usize>)>;

pub fn loss(net: &DynamicNetwork, input: &Tensor<f64>, labels: &[usize], groups: &Groups) -> f64 {
    let refs: Vec<(&Tensor<f64>, Vec<usize>)> = groups.iter().map(|(e, r)| (e, r.clone())).collect();
    net.clone().accumulate_gradients(input, labels, &refs).unwrap()
}

/// Largest relative error over every trainable scalar, controllers included.
pub fn max_relative_error(net: &DynamicNetwork, input: &Tensor<f64>, labels: &[usize], groups: &Groups) -> f64 {
    let mut analytic = net.clone();
    analytic.zero_grad();
    let refs: Vec<(&Tensor<f64>, Vec<usize>)> = groups.iter().map(|(e, r)| (e, r.clone())).collect();
    analytic.accumulate_gradients(input, labels, &refs).unwrap();
    let grads: Vec<Vec<f64>> = analytic
        .parameters_mut(true)
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let mut worst: f64 = 0.0;
    for (pi, g) in grads.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let mut plus = net.clone();
            plus.parameters_mut(true)[pi].value.data_mut()[i] += STEP;
            let mut minus = net.clone();
            minus.parameters_mut(true)[pi].value.data_mut()[i] -= STEP;
            let n = (loss(&plus, input, labels, groups) - loss(&minus, input, labels, groups)) / (2.0 * STEP);
            let err = (a - n).abs() / a.abs().max(n.abs()).max(FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

pub const SEGMENT: usize = 40;

pub fn stream_net() -> DynamicNetwork {
    let specs = ArchSpec {
        widths: vec![4, 8],
        k: 2,
    }
    .layers(3)
    .unwrap();
    let mut r = rng(31);
    let mut net = DynamicNetwork::init(ddn::domains::image_shape(), &specs, 2, FEATURE_DIM, &mut r).unwrap();
    randomize_controllers(&mut net, &mut r, 1.0);
    net
}

/// Day-fog-textured, then night-fog-textured, then day-fog-textured again.
pub fn aba_stream() -> FrameStream {
    let schema = AttributeSchema::driving();
    let data = generate_dataset(
        &schema,
        &DatasetConfig {
            classes: 3,
            per_domain: SEGMENT,
            overrides: Vec::new(),
            seed: 77,
        },
    )
    .unwrap();
    let bank = FeatureBank::compute(&data, &FrozenEncoder::new()).unwrap();
    let part = partition(&schema, &data.samples, &["time", "weather", "scene"]).unwrap();
    let tau = |time: &str| {
        let attrs = [
            schema.value_index(0, time).unwrap(),
            schema.value_index(1, "fog").unwrap(),
            schema.value_index(2, "textured").unwrap(),
        ];
        part.tau_of_attrs(&attrs).unwrap()
    };
    let (a, b) = (tau("day"), tau("night"));
    domain_stream(&data, &bank, &part, &[(a, SEGMENT), (b, SEGMENT), (a, SEGMENT)]).unwrap()
}

pub fn toy_net(seed: u64, k: usize, dim: usize) -> DynamicNetwork {
    let mut r = rng(seed);
    let mut net = DynamicNetwork::init(vec![2, 6, 6], &toy_specs(3), k, dim, &mut r).unwrap();
    randomize_controllers(&mut net, &mut r, 1.0);
    net
}
