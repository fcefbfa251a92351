use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, global_avg_pool_backward,
    global_avg_pool_forward, ConvGeometry,
};
use super::{init, Activation, Parameter, Real, Tensor};
use crate::error::{Error, Result};

/// Geometry of one layer in a feed-forward stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        act: Activation,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        act: Activation,
    },
    GlobalAvgPool,
    Flatten,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_channels, kernel, kernel]),
            LayerSpec::Dense { inputs, outputs, .. } => Some(vec![outputs, inputs]),
            LayerSpec::GlobalAvgPool | LayerSpec::Flatten => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv { out_channels, .. } => Some(out_channels),
            LayerSpec::Dense { outputs, .. } => Some(outputs),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }

    pub fn weight_numel(&self) -> usize {
        self.weight_shape().map_or(0, |s| s.iter().product())
    }

    pub fn param_count(&self) -> usize {
        self.weight_numel() + self.bias_len().unwrap_or(0)
    }

    pub fn has_params(&self) -> bool {
        self.bias_len().is_some()
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
                ..
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(Error::shape("conv layer", format!("[{in_channels}, H, W]"), format!("{input:?}")));
                }
                let geom = ConvGeometry { stride, pad };
                Ok(vec![
                    out_channels,
                    geom.output_extent(input[1], kernel, "height")?,
                    geom.output_extent(input[2], kernel, "width")?,
                ])
            }
            LayerSpec::Dense { inputs, outputs, .. } => {
                if input != [inputs] {
                    return Err(Error::shape("dense layer", format!("[{inputs}]"), format!("{input:?}")));
                }
                Ok(vec![outputs])
            }
            LayerSpec::GlobalAvgPool => {
                if input.len() != 3 {
                    return Err(Error::shape("global pool", "[C, H, W]", format!("{input:?}")));
                }
                Ok(vec![input[0]])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Seeded He-uniform weight and zero bias for a parameterised layer.
    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, gain: f64, rng: &mut R) -> Option<LayerParams<T>> {
        let shape = self.weight_shape()?;
        let weight = init::he_uniform(&shape, self.fan_in(), gain, rng);
        let bias = Tensor::zeros(vec![self.bias_len()?]);
        Some(LayerParams {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
        })
    }
}

/// Checks that `specs` chain from `input` and returns the final per-sample shape.
pub fn chain_shapes(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>> {
    specs
        .iter()
        .try_fold(input.to_vec(), |shape, spec| spec.output_shape(&shape))
}

/// Weight and bias of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T: Real = f64> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Real> LayerParams<T> {
    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        LayerParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Borrowed weight/bias pair handed to the stack kernels.
pub type WeightRef<'a, T> = Option<(&'a Tensor<T>, &'a Tensor<T>)>;

/// Activations recorded during a forward pass, consumed by backward.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Real = f64> {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    activations: Vec<Tensor<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { activations: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    pub fn clear(&mut self) {
        self.activations.clear();
    }

    pub fn output(&self) -> Option<&Tensor<T>> {
        self.activations.last()
    }
}

pub fn forward_layer<T: Real>(spec: &LayerSpec, weights: WeightRef<'_, T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    match (*spec, weights) {
        (LayerSpec::Conv { stride, pad, act, .. }, Some((w, b))) => {
            conv2d_forward(input, w, b, ConvGeometry { stride, pad }, act)
        }
        (LayerSpec::Dense { act, .. }, Some((w, b))) => dense_forward(input, w, b, act),
        (LayerSpec::GlobalAvgPool, None) => global_avg_pool_forward(input),
        (LayerSpec::Flatten, None) => {
            let batch = input.dim(0);
            input.clone().reshape(vec![batch, input.len() / batch])
        }
        _ => Err(Error::InvalidArgument(format!("weights do not match layer {spec:?}"))),
    }
}

/// Runs the stack, recording activations on `tape` when given.
pub fn run_layers<T: Real>(
    specs: &[LayerSpec],
    weights: &[WeightRef<'_, T>],
    input: Tensor<T>,
    mut tape: Option<&mut Tape<T>>,
) -> Result<Tensor<T>> {
    if specs.len() != weights.len() {
        return Err(Error::shape("run_layers", specs.len(), weights.len()));
    }
    if let Some(tape) = tape.as_deref_mut() {
        tape.activations.clear();
        tape.activations.push(input.clone());
    }
    let mut x = input;
    for (spec, w) in specs.iter().zip(weights) {
        x = forward_layer(spec, *w, &x)?;
        if let Some(tape) = tape.as_deref_mut() {
            tape.activations.push(x.clone());
        }
    }
    Ok(x)
}

/// Gradient of one parameterised layer: `(d weight, d bias)`.
pub type WeightGrad<T> = Option<(Tensor<T>, Tensor<T>)>;

/// Back-propagates `grad_output` through a recorded stack and returns the
/// per-layer weight gradients (in layer order) and the input gradient.
pub fn backprop_layers<T: Real>(
    specs: &[LayerSpec],
    weights: &[WeightRef<'_, T>],
    tape: &Tape<T>,
    grad_output: &Tensor<T>,
) -> Result<(Vec<WeightGrad<T>>, Tensor<T>)> {
    if tape.is_empty() {
        return Err(Error::EmptyTape);
    }
    if tape.activations.len() != specs.len() + 1 || weights.len() != specs.len() {
        return Err(Error::shape("backward", specs.len() + 1, tape.activations.len()));
    }
    let mut grads = vec![None; specs.len()];
    let mut g = grad_output.clone();
    for i in (0..specs.len()).rev() {
        let input = &tape.activations[i];
        let output = &tape.activations[i + 1];
        g = match (specs[i], weights[i]) {
            (LayerSpec::Conv { stride, pad, act, .. }, Some((w, _))) => {
                let lg = conv2d_backward(input, w, output, &g, ConvGeometry { stride, pad }, act)?;
                grads[i] = Some((lg.weight, lg.bias));
                lg.input
            }
            (LayerSpec::Dense { act, .. }, Some((w, _))) => {
                let lg = dense_backward(input, w, output, &g, act)?;
                grads[i] = Some((lg.weight, lg.bias));
                lg.input
            }
            (LayerSpec::GlobalAvgPool, None) => global_avg_pool_backward(input.shape(), &g),
            (LayerSpec::Flatten, None) => g.reshape(input.shape().to_vec())?,
            (spec, _) => return Err(Error::InvalidArgument(format!("weights do not match layer {spec:?}"))),
        };
    }
    Ok((grads, g))
}

/// One layer of a static network.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticLayer<T: Real = f64> {
    pub spec: LayerSpec,
    pub params: Option<LayerParams<T>>,
}

impl<T: Real> StaticLayer<T> {
    pub fn weights(&self) -> WeightRef<'_, T> {
        self.params.as_ref().map(|p| (&p.weight.value, &p.bias.value))
    }
}

/// A static feed-forward network: every layer holds a single weight tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T: Real = f64> {
    input_shape: Vec<usize>,
    layers: Vec<StaticLayer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(input_shape: Vec<usize>, layers: Vec<StaticLayer<T>>) -> Result<Self> {
        let specs: Vec<_> = layers.iter().map(|l| l.spec).collect();
        chain_shapes(&specs, &input_shape)?;
        for layer in &layers {
            match (&layer.params, layer.spec.weight_shape()) {
                (Some(p), Some(shape)) => {
                    p.weight.value.expect_shape("Sequential::new", &shape)?;
                    p.bias.value.expect_shape("Sequential::new", &[layer.spec.bias_len().unwrap_or(0)])?;
                }
                (None, None) => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "parameters do not match layer {:?}",
                        layer.spec
                    )))
                }
            }
        }
        Ok(Self { input_shape, layers })
    }

    /// Seeded He-uniform initialisation of every parameterised layer.
    pub fn init<R: Rng + ?Sized>(input_shape: Vec<usize>, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|spec| StaticLayer {
                spec: *spec,
                params: spec.init_params(1.0, rng),
            })
            .collect();
        Self::new(input_shape, layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[StaticLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [StaticLayer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    fn weight_refs(&self) -> Vec<WeightRef<'_, T>> {
        self.layers.iter().map(StaticLayer::weights).collect()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.rank() < 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(
                "forward",
                format!("[B, {:?}]", self.input_shape),
                format!("{:?}", input.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        run_layers(&self.specs(), &self.weight_refs(), input.clone(), None)
    }

    pub fn forward_recorded(&self, input: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        run_layers(&self.specs(), &self.weight_refs(), input.clone(), Some(tape))
    }

    /// Accumulates `∂loss/∂param` into every parameter's `grad`.
    pub fn backward(&mut self, tape: &Tape<T>, grad_output: &Tensor<T>) -> Result<()> {
        let (grads, _) = backprop_layers(&self.specs(), &self.weight_refs(), tape, grad_output)?;
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            if let (Some(p), Some((gw, gb))) = (layer.params.as_mut(), g) {
                p.weight.grad.add_scaled(T::one(), &gw)?;
                p.bias.grad.add_scaled(T::one(), &gb)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.layers.iter_mut().filter_map(|l| l.params.as_mut()) {
            p.weight.zero_grad();
            p.bias.zero_grad();
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.params.as_mut())
            .flat_map(|p| [&mut p.weight, &mut p.bias])
            .collect()
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .flat_map(|p| [&p.weight, &p.bias])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Sequential<U> {
        Sequential {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| StaticLayer {
                    spec: l.spec,
                    params: l.params.as_ref().map(LayerParams::cast),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::softmax_cross_entropy;

    fn dense(inputs: usize, outputs: usize, act: Activation) -> LayerSpec {
        LayerSpec::Dense { inputs, outputs, act }
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Sequential::<f64>::init(vec![3], &[dense(3, 1, Activation::Identity)], &mut rng).unwrap();
        let mut tape = Tape::new();
        net.forward_recorded(&x, &mut tape).unwrap();
        net.backward(&tape, &Tensor::full(vec![1, 1], 1.0)).unwrap();
        assert_eq!(net.parameters()[0].grad.data(), x.data());
    }

    #[test]
    fn backward_without_forward_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Sequential::<f64>::init(vec![2], &[dense(2, 2, Activation::Relu)], &mut rng).unwrap();
        let err = net.backward(&Tape::new(), &Tensor::zeros(vec![1, 2])).unwrap_err();
        assert!(matches!(err, Error::EmptyTape));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Sequential::<f64>::init(
            vec![4],
            &[dense(4, 5, Activation::Relu), dense(5, 3, Activation::Identity)],
            &mut rng,
        )
        .unwrap();
        let x = Tensor::from_fn(vec![2, 4], |i| (i as f64 * 0.37).sin());
        let mut tape = Tape::new();
        let logits = net.forward_recorded(&x, &mut tape).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &[0, 2]).unwrap();
        net.zero_grad();
        net.backward(&tape, &g).unwrap();
        let once: Vec<_> = net.parameters().iter().map(|p| p.grad.clone()).collect();
        net.backward(&tape, &g).unwrap();
        for (p, g1) in net.parameters().iter().zip(&once) {
            let mut doubled = g1.clone();
            doubled.scale(2.0);
            assert!(p.grad.max_abs_diff(&doubled).unwrap() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_chaining_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = Sequential::<f64>::init(
            vec![4],
            &[dense(4, 5, Activation::Relu), dense(4, 3, Activation::Identity)],
            &mut rng,
        );
        assert!(err.is_err());
    }
}
