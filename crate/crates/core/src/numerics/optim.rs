use super::{Parameter, Real, Tensor};
use crate::error::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum.
///
/// Velocity buffers are matched to parameters by position, so every call to
/// [`Sgd::step`] must pass the parameters in the same order.
#[derive(Clone, Debug)]
pub struct Sgd<T: Real = f64> {
    lr: T,
    momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Result<Self> {
        let mut sgd = Self {
            lr: T::one(),
            momentum: T::zero(),
            velocity: Vec::new(),
        };
        sgd.set_lr(lr)?;
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")));
        }
        sgd.momentum = momentum;
        Ok(sgd)
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn set_lr(&mut self, lr: T) -> Result<()> {
        if !(lr > T::zero()) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        self.lr = lr;
        Ok(())
    }

    /// `v ← momentum·v + grad; value ← value − lr·v`. Gradients are left untouched.
    pub fn step(&mut self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::shape("Sgd::step", self.velocity.len(), params.len()));
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            v.expect_same_shape("Sgd::step", &p.value)?;
            for ((x, vel), &g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(p.grad.data()) {
                *vel = self.momentum * *vel + g;
                *x -= self.lr * *vel;
            }
        }
        Ok(())
    }
}

/// One plain SGD update of a parameter list; no momentum state is kept.
pub fn sgd_step<T: Real>(params: &mut [&mut Parameter<T>], lr: T) -> Result<()> {
    Sgd::new(lr, T::zero())?.step(params)
}
