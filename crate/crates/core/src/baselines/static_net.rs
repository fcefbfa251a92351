use crate::domains::Dataset;
use crate::dynnet::{apply_weight_decay, sample_batch, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::numerics::{softmax_cross_entropy, Sequential, Sgd, Tape};

/// Plain SGD on `members` (positions into `dataset`), batches drawn uniformly
/// with replacement.
pub fn train_static(
    net: &mut Sequential,
    dataset: &Dataset,
    members: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if members.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty sample set".into()));
    }
    if members.iter().any(|&m| m >= dataset.len()) {
        return Err(Error::InvalidArgument("training member out of range".into()));
    }
    let mut rng = cfg.rng();
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut tape = Tape::new();
    let mut history = TrainHistory::default();
    for step in 0..cfg.steps {
        sgd.set_lr(cfg.lr_at(step))?;
        let batch = sample_batch(&mut rng, members, cfg.batch_size);
        let images = dataset.batch_images::<f64>(&batch);
        let labels = dataset.labels(&batch);
        net.zero_grad();
        let logits = net.forward_recorded(&images, &mut tape)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
        net.backward(&tape, &grad)?;
        let weights = net.layers_mut().iter_mut().filter_map(|l| l.params.as_mut()).map(|p| &mut p.weight).collect();
        apply_weight_decay(weights, cfg.weight_decay)?;
        sgd.step(&mut net.parameters_mut())?;
        history.losses.push(loss);
        history.domains.push(0);
    }
    net.zero_grad();
    Ok(history)
}
