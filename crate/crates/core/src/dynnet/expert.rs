use rand::Rng;

use super::controller::{controller_alpha, ControllerParams};
use crate::error::{Error, Result};
use crate::numerics::{he_uniform, LayerSpec, Parameter, Real, Tensor};

/// A parameterised layer whose weight is a controller-weighted sum of `K` experts.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertLayer<T: Real = f64> {
    pub spec: LayerSpec,
    pub experts: Vec<Parameter<T>>,
    /// Shared by all experts.
    pub bias: Parameter<T>,
    pub controllers: Vec<ControllerParams<T>>,
}

impl<T: Real> ExpertLayer<T> {
    pub fn new(
        spec: LayerSpec,
        experts: Vec<Parameter<T>>,
        bias: Parameter<T>,
        controllers: Vec<ControllerParams<T>>,
    ) -> Result<Self> {
        let shape = spec
            .weight_shape()
            .ok_or_else(|| Error::InvalidArgument(format!("layer {spec:?} has no weights to expand")))?;
        if experts.is_empty() {
            return Err(Error::InvalidArgument("an expert layer needs K >= 1".into()));
        }
        if controllers.len() != experts.len() {
            return Err(Error::shape("expert controllers", experts.len(), controllers.len()));
        }
        for e in &experts {
            e.value.expect_shape("expert weight", &shape)?;
        }
        bias.value.expect_shape("expert bias", &[spec.bias_len().unwrap_or(0)])?;
        let dim = controllers[0].dim();
        for c in &controllers {
            c.weight.value.expect_shape("controller weight", &[dim])?;
            c.bias.value.expect_shape("controller bias", &[1])?;
        }
        Ok(Self {
            spec,
            experts,
            bias,
            controllers,
        })
    }

    /// `k` He-uniform experts scaled by `2/√k`, so the initial fold at `α = 0.5`
    /// has the variance of a single He-initialised weight; zero bias and `θ`.
    pub fn init<R: Rng + ?Sized>(spec: LayerSpec, k: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let shape = spec
            .weight_shape()
            .ok_or_else(|| Error::InvalidArgument(format!("layer {spec:?} has no weights to expand")))?;
        let gain = 2.0 / (k.max(1) as f64).sqrt();
        let experts = (0..k)
            .map(|_| Parameter::new(he_uniform(&shape, spec.fan_in(), gain, rng)))
            .collect();
        let bias = Parameter::new(Tensor::zeros(vec![spec.bias_len().unwrap_or(0)]));
        let controllers = (0..k).map(|_| ControllerParams::zeros(dim)).collect();
        Self::new(spec, experts, bias, controllers)
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.controllers[0].dim()
    }

    pub fn param_count(&self) -> usize {
        self.experts.iter().map(Parameter::numel).sum::<usize>()
            + self.bias.numel()
            + self.controllers.iter().map(|c| c.dim() + 1).sum::<usize>()
    }

    pub fn alphas(&self, embedding: &Tensor<T>) -> Result<Vec<T>> {
        self.controllers.iter().map(|c| controller_alpha(c, embedding)).collect()
    }

    /// `Σ_j alphas[j] · W_j`.
    pub fn combine(&self, alphas: &[T]) -> Result<Tensor<T>> {
        if alphas.len() != self.k() {
            return Err(Error::shape("combine", self.k(), alphas.len()));
        }
        let mut w = Tensor::zeros(self.experts[0].shape().to_vec());
        for (e, &a) in self.experts.iter().zip(alphas) {
            w.add_scaled(a, &e.value)?;
        }
        Ok(w)
    }

    /// Accumulates expert, bias and controller gradients given the gradient
    /// of the folded weight and bias.
    pub fn accumulate_fold_grad(
        &mut self,
        embedding: &Tensor<T>,
        alphas: &[T],
        grad_weight: &Tensor<T>,
        grad_bias: &Tensor<T>,
    ) -> Result<()> {
        self.bias.grad.add_scaled(T::one(), grad_bias)?;
        for ((expert, ctrl), &a) in self.experts.iter_mut().zip(&mut self.controllers).zip(alphas) {
            let grad_alpha = grad_weight.dot(&expert.value)?;
            expert.grad.add_scaled(a, grad_weight)?;
            ctrl.accumulate(embedding, a, grad_alpha)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.experts.iter_mut().for_each(Parameter::zero_grad);
        self.bias.zero_grad();
        self.controllers.iter_mut().for_each(ControllerParams::zero_grad);
    }

    pub fn cast<U: Real>(&self) -> ExpertLayer<U> {
        ExpertLayer {
            spec: self.spec,
            experts: self.experts.iter().map(Parameter::cast).collect(),
            bias: self.bias.cast(),
            controllers: self.controllers.iter().map(ControllerParams::cast).collect(),
        }
    }
}

/// Folded weight `W_i(e) = Σ_j α_{i,j}(e) · W_{i,j}` and the factors used.
pub fn fold_layer<T: Real>(layer: &ExpertLayer<T>, embedding: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let alphas = layer.alphas(embedding)?;
    Ok((layer.combine(&alphas)?, alphas))
}
