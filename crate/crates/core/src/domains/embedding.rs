use rand::seq::SliceRandom;

use super::encoder::{FeatureBank, FeatureExtractor};
use super::generate::SampleRecord;
use super::partition::DomainPartition;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seed;

/// Mean encoder feature over the images of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainEmbedding {
    pub vector: Tensor<f64>,
    pub count: usize,
}

impl DomainEmbedding {
    /// Arithmetic mean of `features`.
    pub fn mean_of<'a>(features: impl IntoIterator<Item = &'a Tensor<f64>>) -> Result<Self> {
        let mut iter = features.into_iter();
        let first = iter.next().ok_or_else(|| Error::InvalidArgument("mean of zero features".into()))?;
        let mut sum = first.clone();
        let mut count = 1;
        for f in iter {
            sum.add_scaled(1.0, f)?;
            count += 1;
        }
        sum.scale(1.0 / count as f64);
        if !sum.is_finite() {
            return Err(Error::InvalidArgument("non-finite domain embedding".into()));
        }
        Ok(Self { vector: sum, count })
    }
}

/// Embedding of domain `tau`, encoding its member images with `encoder`.
pub fn domain_embedding(
    partition: &DomainPartition,
    tau: usize,
    samples: &[SampleRecord],
    encoder: &dyn FeatureExtractor,
) -> Result<DomainEmbedding> {
    let group = partition.group(tau)?;
    if group.members.is_empty() {
        return Err(Error::EmptyDomain(tau));
    }
    let images: Vec<_> = group.members.iter().map(|&m| &samples[m].image).collect();
    let features = encoder.encode_many(&images)?;
    DomainEmbedding::mean_of(&features)
}

/// Embedding of domain `tau` from precomputed per-sample features.
pub fn domain_embedding_from_bank(partition: &DomainPartition, tau: usize, bank: &FeatureBank) -> Result<DomainEmbedding> {
    let group = partition.group(tau)?;
    if group.members.is_empty() {
        return Err(Error::EmptyDomain(tau));
    }
    DomainEmbedding::mean_of(group.members.iter().map(|&m| bank.get(m)))
}

/// Fixed embeddings for every domain of a partition, indexed by `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    embeddings: Vec<DomainEmbedding>,
}

impl EmbeddingTable {
    pub fn compute(partition: &DomainPartition, bank: &FeatureBank) -> Result<Self> {
        let embeddings = (0..partition.len())
            .map(|tau| domain_embedding_from_bank(partition, tau, bank))
            .collect::<Result<_>>()?;
        Ok(Self { embeddings })
    }

    pub fn from_embeddings(embeddings: Vec<DomainEmbedding>) -> Self {
        Self { embeddings }
    }

    pub fn get(&self, tau: usize) -> Result<&DomainEmbedding> {
        self.embeddings.get(tau).ok_or(Error::UnknownDomain(tau))
    }

    pub fn embeddings(&self) -> &[DomainEmbedding] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Seeded uniform permutation of the embeddings. Returns the permuted list
/// and `perm`, where slot `i` now holds the original embedding `perm[i]`.
pub fn shuffle_embeddings(embeddings: &[DomainEmbedding], shuffle_seed: u64) -> Result<(Vec<DomainEmbedding>, Vec<usize>)> {
    if embeddings.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "shuffling needs at least 2 embeddings, got {}",
            embeddings.len()
        )));
    }
    let mut perm: Vec<usize> = (0..embeddings.len()).collect();
    perm.shuffle(&mut seed::rng(shuffle_seed));
    let shuffled = perm.iter().map(|&i| embeddings[i].clone()).collect();
    Ok((shuffled, perm))
}
