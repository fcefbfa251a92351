use super::pool::ModelPool;
use crate::dynnet::DynamicNetwork;
use crate::error::{Error, Result};
use crate::numerics::{Sequential, Tensor};

/// Everything a model may condition on when scoring a batch from one domain.
#[derive(Clone, Copy, Debug)]
pub struct EvalBatch<'a> {
    pub images: &'a Tensor<f64>,
    /// Domain id under the model's training partition.
    pub domain: usize,
    pub embedding: &'a Tensor<f64>,
    /// Encoder feature of each image, row-aligned with `images`.
    pub features: &'a [Tensor<f64>],
}

/// Common evaluation interface of every model kind.
pub trait Predictor: Send + Sync {
    fn logits(&self, batch: &EvalBatch<'_>) -> Result<Tensor<f64>>;

    /// Parameters that must be stored.
    fn total_params(&self) -> usize;

    /// Parameters of the network that actually runs on one input.
    fn inference_params(&self) -> usize;
}

impl Predictor for Sequential {
    fn logits(&self, batch: &EvalBatch<'_>) -> Result<Tensor<f64>> {
        self.forward(batch.images)
    }

    fn total_params(&self) -> usize {
        self.param_count()
    }

    fn inference_params(&self) -> usize {
        self.param_count()
    }
}

impl Predictor for ModelPool {
    fn logits(&self, batch: &EvalBatch<'_>) -> Result<Tensor<f64>> {
        self.route(batch.domain)?.forward(batch.images)
    }

    fn total_params(&self) -> usize {
        self.total_param_count()
    }

    fn inference_params(&self) -> usize {
        self.inference_param_count()
    }
}

/// A dynamic network conditioned on the domain embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Ddn(pub DynamicNetwork);

/// A dynamic network conditioned on each image's own feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Sdn(pub DynamicNetwork);

impl Predictor for Ddn {
    fn logits(&self, batch: &EvalBatch<'_>) -> Result<Tensor<f64>> {
        self.0.fold(batch.embedding, Some(batch.domain))?.forward(batch.images)
    }

    fn total_params(&self) -> usize {
        self.0.param_count()
    }

    fn inference_params(&self) -> usize {
        self.0.inference_param_count()
    }
}

impl Predictor for Sdn {
    fn logits(&self, batch: &EvalBatch<'_>) -> Result<Tensor<f64>> {
        if batch.features.len() != batch.images.dim(0) {
            return Err(Error::shape("sdn features", batch.images.dim(0), batch.features.len()));
        }
        self.0.forward_per_sample(batch.features, batch.images)
    }

    fn total_params(&self) -> usize {
        self.0.param_count()
    }

    fn inference_params(&self) -> usize {
        self.0.inference_param_count()
    }
}
