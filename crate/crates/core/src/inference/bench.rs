use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::engine::{stream_infer, EngineConfig, StreamEngine};
use crate::dynnet::DynamicNetwork;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    /// Fold once per detected domain and reuse the static network.
    FoldedReuse,
    /// Recombine the weights for every frame at that frame's own feature.
    PerSampleFold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Frames run untimed before measuring.
    pub warmup: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { warmup: 50, repeats: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
}

impl HostInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    #[serde(rename = "K")]
    pub k: usize,
    pub frames: usize,
    pub fps_median: f64,
    pub fps_iqr: f64,
    /// Folds performed in one timed pass.
    pub fold_events: usize,
    pub host_info: HostInfo,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One pass over the stream; returns the number of folds performed.
fn run_once(
    net: &DynamicNetwork<f32>,
    features: &[Tensor<f64>],
    inputs: &[Tensor<f32>],
    mode: BenchMode,
) -> Result<usize> {
    match mode {
        BenchMode::FoldedReuse => {
            let mut engine = StreamEngine::new(net.clone(), EngineConfig::default(), None)?;
            let out = stream_infer(&mut engine, features, inputs)?;
            std::hint::black_box(&out.frames);
            Ok(engine.fold_count())
        }
        BenchMode::PerSampleFold => {
            let mut shape = vec![1];
            shape.extend_from_slice(net.input_shape());
            for (f, x) in features.iter().zip(inputs) {
                let x = x.clone().reshape(shape.clone())?;
                std::hint::black_box(net.forward_dynamic(&f.cast(), &x)?);
            }
            Ok(inputs.len())
        }
    }
}

/// Frames per second of `mode` over a pre-encoded stream (encoder cost
/// excluded), median and interquartile range over `cfg.repeats` timed passes.
pub fn bench_throughput(
    net: &DynamicNetwork<f32>,
    features: &[Tensor<f64>],
    inputs: &[Tensor<f32>],
    mode: BenchMode,
    cfg: BenchConfig,
) -> Result<BenchReport> {
    if features.len() != inputs.len() {
        return Err(Error::shape("bench stream", features.len(), inputs.len()));
    }
    if inputs.len() <= cfg.warmup {
        return Err(Error::InvalidArgument(format!(
            "stream of {} frames is too short for {} warmup frames",
            inputs.len(),
            cfg.warmup
        )));
    }
    if cfg.repeats == 0 {
        return Err(Error::InvalidArgument("need at least one repeat".into()));
    }
    run_once(net, &features[..cfg.warmup], &inputs[..cfg.warmup], mode)?;
    let mut fps = Vec::with_capacity(cfg.repeats);
    let mut fold_events = 0;
    for _ in 0..cfg.repeats {
        let start = Instant::now();
        fold_events = run_once(net, features, inputs, mode)?;
        fps.push(inputs.len() as f64 / start.elapsed().as_secs_f64());
    }
    fps.sort_by(f64::total_cmp);
    Ok(BenchReport {
        mode,
        k: net.k(),
        frames: inputs.len(),
        fps_median: quantile(&fps, 0.5),
        fps_iqr: quantile(&fps, 0.75) - quantile(&fps, 0.25),
        fold_events,
        host_info: HostInfo::current(),
    })
}
