use std::collections::HashMap;

use crate::domains::{Dataset, FeatureBank, FeatureExtractor};
use crate::dynnet::{apply_weight_decay, sample_batch, DynamicNetwork, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::numerics::{Sgd, Tensor};

/// Sample-dependent inference: each image is encoded and the network is
/// refolded at that image's own feature.
pub fn sdn_forward(net: &DynamicNetwork, encoder: &dyn FeatureExtractor, images: &[&Tensor<f32>]) -> Result<Tensor<f64>> {
    let features = encoder.encode_many(images)?;
    let batch = Tensor::stack(images)?.cast::<f64>();
    net.forward_per_sample(&features, &batch)
}

/// Groups batch rows with bitwise-identical features, in first-seen order.
fn group_rows<'a>(features: &[&'a Tensor<f64>]) -> Vec<(&'a Tensor<f64>, Vec<usize>)> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<(&Tensor<f64>, Vec<usize>)> = Vec::new();
    for (row, f) in features.iter().enumerate() {
        let key: Vec<u64> = f.data().iter().map(|x| x.to_bits()).collect();
        let slot = *index.entry(key).or_insert_with(|| {
            groups.push((f, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(row);
    }
    groups
}

/// Training with per-image conditioning: batches are drawn uniformly from the
/// whole dataset and each row is folded at its own encoder feature.
pub fn train_sdn(net: &mut DynamicNetwork, dataset: &Dataset, bank: &FeatureBank, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if bank.len() != dataset.len() {
        return Err(Error::shape("feature bank", dataset.len(), bank.len()));
    }
    let members: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = cfg.rng();
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut history = TrainHistory::default();
    for step in 0..cfg.steps {
        sgd.set_lr(cfg.lr_at(step))?;
        let batch = sample_batch(&mut rng, &members, cfg.batch_size);
        let images = dataset.batch_images::<f64>(&batch);
        let labels = dataset.labels(&batch);
        let feats: Vec<&Tensor<f64>> = batch.iter().map(|&i| bank.get(i)).collect();
        let groups = group_rows(&feats);
        net.zero_grad();
        let loss = net.accumulate_gradients(&images, &labels, &groups)?;
        apply_weight_decay(net.decayed_parameters_mut(), cfg.weight_decay)?;
        sgd.step(&mut net.parameters_mut(!cfg.freeze_controllers))?;
        history.losses.push(loss);
        history.domains.push(0);
    }
    net.zero_grad();
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_features_share_a_group() {
        let a = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let b = Tensor::vector(vec![1.0, 2.5]).unwrap();
        let a2 = a.clone();
        let groups = group_rows(&[&a, &b, &a2, &b]);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].1, vec![0, 2]);
        assert_eq!(groups[1].1, vec![1, 3]);
    }
}
