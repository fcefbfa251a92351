use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Parameter, Real, Tensor};

/// `θ_{i,j}`: one linear map from the embedding to a scalar, followed by a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams<T: Real = f64> {
    /// Shape `[d]`.
    pub weight: Parameter<T>,
    /// Shape `[1]`.
    pub bias: Parameter<T>,
}

impl<T: Real> ControllerParams<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: Parameter::new(Tensor::zeros(vec![dim])),
            bias: Parameter::new(Tensor::zeros(vec![1])),
        }
    }

    pub fn new(weight: Tensor<T>, bias: T) -> Result<Self> {
        if weight.rank() != 1 {
            return Err(Error::shape("controller weight", "[d]", format!("{:?}", weight.shape())));
        }
        Ok(Self {
            weight: Parameter::new(weight),
            bias: Parameter::new(Tensor::full(vec![1], bias)),
        })
    }

    pub fn dim(&self) -> usize {
        self.weight.numel()
    }

    pub fn bias_value(&self) -> T {
        self.bias.value.data()[0]
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }

    /// Accumulates the gradient of `α` given `∂L/∂α`.
    pub(crate) fn accumulate(&mut self, embedding: &Tensor<T>, alpha: T, grad_alpha: T) -> Result<()> {
        let s = grad_alpha * alpha * (T::one() - alpha);
        self.weight.grad.add_scaled(s, embedding)?;
        self.bias.grad.data_mut()[0] += s;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ControllerParams<U> {
        ControllerParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `α = sigmoid(θ.weight · e + θ.bias)`.
pub fn controller_alpha<T: Real>(theta: &ControllerParams<T>, embedding: &Tensor<T>) -> Result<T> {
    if embedding.shape() != [theta.dim()] {
        return Err(Error::shape(
            "controller_alpha",
            format!("[{}]", theta.dim()),
            format!("{:?}", embedding.shape()),
        ));
    }
    Ok(sigmoid(theta.weight.value.dot(embedding)? + theta.bias_value()))
}

/// SHA-256 of the embedding's `f64` little-endian bytes, hex encoded.
pub fn embedding_fingerprint<T: Real>(embedding: &Tensor<T>) -> String {
    let mut h = Sha256::new();
    h.update(embedding.to_le_f64_bytes());
    hex::encode(h.finalize())
}
