use crate::domains::{Dataset, DomainPartition, FeatureBank};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Pre-encoded frame stream: per-frame encoder features and `f32` images.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStream {
    pub features: Vec<Tensor<f64>>,
    pub inputs: Vec<Tensor<f32>>,
    /// Domain of every frame under the partition the stream was cut from.
    pub domains: Vec<usize>,
}

/// `frames` consecutive frames per listed domain, cycling through each
/// domain's members in id order.
pub fn domain_stream(
    data: &Dataset,
    bank: &FeatureBank,
    partition: &DomainPartition,
    segments: &[(usize, usize)],
) -> Result<FrameStream> {
    if bank.len() != data.len() {
        return Err(Error::shape("domain_stream", data.len(), bank.len()));
    }
    let mut out = FrameStream {
        features: Vec::new(),
        inputs: Vec::new(),
        domains: Vec::new(),
    };
    for &(tau, frames) in segments {
        let members = &partition.group(tau)?.members;
        for &m in members.iter().cycle().take(frames) {
            out.features.push(bank.get(m).clone());
            out.inputs.push(data.samples[m].image.clone());
            out.domains.push(tau);
        }
    }
    Ok(out)
}
