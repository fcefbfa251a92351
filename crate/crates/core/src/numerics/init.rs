use rand::Rng;

use super::{Real, Tensor};

/// He-uniform initialisation: U(-b, b) with b = gain * sqrt(6 / fan_in).
pub fn he_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<T> {
    let bound = gain * (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-bound..=bound)))
}
