use sha2::{Digest, Sha256};

use super::generate::{image_shape, Dataset, IMAGE_CHANNELS};
use crate::error::{Error, Result};
use crate::numerics::{Activation, LayerSpec, Sequential, Tensor};
use crate::seed;

pub const FEATURE_DIM: usize = 32;
pub const ENCODER_SEED: u64 = 0x00E5_C0DE;
/// Pixels are shifted by this before the first convolution.
const PIXEL_CENTER: f64 = 0.25;

/// Maps one image to a feature vector.
pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;

    fn encode(&self, image: &Tensor<f32>) -> Result<Tensor<f64>>;

    fn encode_many(&self, images: &[&Tensor<f32>]) -> Result<Vec<Tensor<f64>>> {
        images.iter().map(|im| self.encode(im)).collect()
    }
}

/// Frozen, randomly initialised three-layer convolutional encoder.
///
/// Input pixels are shifted by a fixed offset and every final-layer filter has
/// zero-sum weights, so features respond to structure rather than to a
/// common offset. The final feature map is averaged over space. Weights never
/// change after construction.
#[derive(Clone, Debug)]
pub struct FrozenEncoder {
    net: Sequential<f64>,
}

impl Default for FrozenEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl FrozenEncoder {
    pub fn new() -> Self {
        let relu = Activation::Relu;
        let specs = [
            LayerSpec::Conv {
                in_channels: IMAGE_CHANNELS,
                out_channels: 16,
                kernel: 3,
                stride: 2,
                pad: 1,
                act: relu,
            },
            LayerSpec::Conv {
                in_channels: 16,
                out_channels: 32,
                kernel: 3,
                stride: 2,
                pad: 1,
                act: relu,
            },
            LayerSpec::Conv {
                in_channels: 32,
                out_channels: FEATURE_DIM,
                kernel: 3,
                stride: 1,
                pad: 1,
                act: Activation::Identity,
            },
            LayerSpec::GlobalAvgPool,
        ];
        let mut rng = seed::rng(ENCODER_SEED);
        let mut net = Sequential::init(image_shape(), &specs, &mut rng).expect("encoder layers chain");
        let last = net.layers_mut()[2].params.as_mut().expect("conv has params");
        let per_filter = last.weight.value.len() / FEATURE_DIM;
        for filter in last.weight.value.data_mut().chunks_mut(per_filter) {
            let mean = filter.iter().sum::<f64>() / per_filter as f64;
            filter.iter_mut().for_each(|w| *w -= mean);
        }
        Self { net }
    }

    /// SHA-256 over every parameter byte.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in self.net.parameters() {
            h.update(p.value.to_le_f64_bytes());
        }
        hex::encode(h.finalize())
    }

    fn encode_batch(&self, images: &[&Tensor<f32>]) -> Result<Vec<Tensor<f64>>> {
        for im in images {
            im.expect_shape("encode_image", &image_shape())?;
        }
        let mut stacked = Tensor::stack(images)?.cast::<f64>();
        stacked.data_mut().iter_mut().for_each(|p| *p -= PIXEL_CENTER);
        let out = self.net.forward(&stacked)?;
        Ok(out
            .data()
            .chunks_exact(FEATURE_DIM)
            .map(|row| Tensor::vector(row.to_vec()).expect("feature row"))
            .collect())
    }
}

impl FeatureExtractor for FrozenEncoder {
    fn dim(&self) -> usize {
        FEATURE_DIM
    }

    fn encode(&self, image: &Tensor<f32>) -> Result<Tensor<f64>> {
        Ok(self.encode_batch(&[image])?.remove(0))
    }

    fn encode_many(&self, images: &[&Tensor<f32>]) -> Result<Vec<Tensor<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            out.extend(self.encode_batch(chunk)?);
        }
        Ok(out)
    }
}

/// Per-sample encoder features of a dataset, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    features: Vec<Tensor<f64>>,
}

impl FeatureBank {
    /// Encodes every sample; chunks run on separate threads.
    pub fn compute(dataset: &Dataset, encoder: &dyn FeatureExtractor) -> Result<Self> {
        let images: Vec<&Tensor<f32>> = dataset.samples.iter().map(|s| &s.image).collect();
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
        let chunk = images.len().div_ceil(workers).max(1);
        let parts: Vec<Result<Vec<Tensor<f64>>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = images
                .chunks(chunk)
                .map(|part| scope.spawn(move || encoder.encode_many(part)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("encoder thread")).collect()
        });
        let mut features = Vec::with_capacity(images.len());
        for p in parts {
            features.extend(p?);
        }
        Ok(Self { features })
    }

    pub fn from_features(features: Vec<Tensor<f64>>) -> Self {
        Self { features }
    }

    pub fn get(&self, pos: usize) -> &Tensor<f64> {
        &self.features[pos]
    }

    pub fn features(&self) -> &[Tensor<f64>] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> Result<usize> {
        self.features
            .first()
            .map(Tensor::len)
            .ok_or_else(|| Error::InvalidArgument("empty feature bank".into()))
    }
}
