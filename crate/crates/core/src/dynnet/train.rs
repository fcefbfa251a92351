use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::DynamicNetwork;
use crate::domains::{Dataset, DomainPartition, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numerics::{Parameter, Sgd, Tensor};
use crate::seed;

/// Random stream used for batch and domain sampling by every trainer.
pub(crate) const TRAIN_STREAM: u64 = 0x7EA1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Fractions of `steps` at which the learning rate is multiplied by `lr_decay`.
    #[serde(default)]
    pub lr_milestones: Vec<f64>,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep every controller at its current value.
    #[serde(default)]
    pub freeze_controllers: bool,
}

fn default_decay() -> f64 {
    0.1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_milestones: vec![0.6, 0.85],
            lr_decay: 0.1,
            seed: 0,
            freeze_controllers: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument("weight_decay must be non-negative".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::InvalidArgument("lr_decay must be positive".into()));
        }
        Ok(())
    }

    /// Step-decayed learning rate at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let drops = self
            .lr_milestones
            .iter()
            .filter(|&&m| step as f64 >= (m * self.steps as f64).floor())
            .count();
        self.lr * self.lr_decay.powi(drops as i32)
    }

    pub(crate) fn rng(&self) -> rand_chacha::ChaCha8Rng {
        seed::stream_rng(self.seed, TRAIN_STREAM)
    }
}

/// Per-step training record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
    /// Domain sampled at each step (`0` for single-domain trainers).
    pub domains: Vec<usize>,
}

impl TrainHistory {
    /// Mean loss over the first `n` steps.
    pub fn head_mean(&self, n: usize) -> f64 {
        let n = n.min(self.losses.len()).max(1);
        self.losses[..n].iter().sum::<f64>() / n as f64
    }

    /// Mean loss over the last `n` steps.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let n = n.min(self.losses.len()).max(1);
        self.losses[self.losses.len() - n..].iter().sum::<f64>() / n as f64
    }
}

/// `batch` members drawn uniformly with replacement.
pub(crate) fn sample_batch<R: Rng + ?Sized>(rng: &mut R, members: &[usize], batch: usize) -> Vec<usize> {
    (0..batch).map(|_| members[rng.gen_range(0..members.len())]).collect()
}

/// Adds `wd · value` to each parameter's gradient.
pub(crate) fn apply_weight_decay(params: Vec<&mut Parameter<f64>>, wd: f64) -> Result<()> {
    if wd == 0.0 {
        return Ok(());
    }
    for p in params {
        let value = p.value.clone();
        p.grad.add_scaled(wd, &value)?;
    }
    Ok(())
}

/// Trains a dynamic network by sampling a domain per step (weighted by its
/// size), folding at that domain's fixed embedding, and updating experts and
/// controllers through the fold.
pub fn train_ddn(
    net: &mut DynamicNetwork,
    dataset: &Dataset,
    partition: &DomainPartition,
    embeddings: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if partition.sample_count() != dataset.len() {
        return Err(Error::shape("partition size", dataset.len(), partition.sample_count()));
    }
    if embeddings.len() != partition.len() {
        return Err(Error::shape("embedding table", partition.len(), embeddings.len()));
    }
    if partition.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let sizes: Vec<usize> = partition.groups().iter().map(|g| g.members.len()).collect();
    let chooser = WeightedIndex::new(&sizes).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let embs: Vec<&Tensor<f64>> = embeddings.embeddings().iter().map(|e| &e.vector).collect();
    let mut rng = cfg.rng();
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut history = TrainHistory::default();
    for step in 0..cfg.steps {
        sgd.set_lr(cfg.lr_at(step))?;
        // A single domain needs no draw; this keeps the batch stream identical
        // to the static trainer.
        let tau = if sizes.len() == 1 { 0 } else { chooser.sample(&mut rng) };
        let members = &partition.groups()[tau].members;
        if members.is_empty() {
            log::warn!("skipping empty domain {tau}");
            continue;
        }
        let batch = sample_batch(&mut rng, members, cfg.batch_size);
        let images = dataset.batch_images::<f64>(&batch);
        let labels = dataset.labels(&batch);
        net.zero_grad();
        let rows = (0..batch.len()).collect();
        let loss = net.accumulate_gradients(&images, &labels, &[(embs[tau], rows)])?;
        apply_weight_decay(net.decayed_parameters_mut(), cfg.weight_decay)?;
        sgd.step(&mut net.parameters_mut(!cfg.freeze_controllers))?;
        history.losses.push(loss);
        history.domains.push(tau);
    }
    net.zero_grad();
    Ok(history)
}
