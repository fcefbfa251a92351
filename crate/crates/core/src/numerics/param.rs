use super::{Real, Tensor};

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T: Real = f64> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn cast<U: Real>(&self) -> Parameter<U> {
        Parameter {
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}

/// Pointwise non-linearity applied after a layer's affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Used for the final logits layer.
    Identity,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    /// Multiplies upstream gradients in place by the activation derivative,
    /// evaluated from the activation's output.
    pub fn backprop_in_place<T: Real>(self, output: &[T], grad: &mut [T]) {
        if self == Activation::Relu {
            for (g, &y) in grad.iter_mut().zip(output) {
                if y <= T::zero() {
                    *g = T::zero();
                }
            }
        }
    }
}
