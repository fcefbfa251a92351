use rand::Rng;

use super::controller::embedding_fingerprint;
use super::expert::{fold_layer, ExpertLayer};
use crate::error::{Error, Result};
use crate::numerics::{
    backprop_layers, chain_shapes, forward_layer, run_layers, softmax_cross_entropy, LayerParams, LayerSpec,
    Parameter, Real, Sequential, StaticLayer, Tape, Tensor, WeightRef,
};

#[derive(Clone, Debug, PartialEq)]
pub enum DynLayer<T: Real = f64> {
    Expert(ExpertLayer<T>),
    Static(StaticLayer<T>),
}

impl<T: Real> DynLayer<T> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            DynLayer::Expert(l) => l.spec,
            DynLayer::Static(l) => l.spec,
        }
    }
}

/// Where a folded network's weights came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub domain: Option<usize>,
    /// SHA-256 of the embedding bytes.
    pub fingerprint: String,
}

/// Static snapshot of a dynamic network at one embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedNetwork<T: Real = f64> {
    pub net: Sequential<T>,
    pub provenance: Provenance,
    /// Factors per dynamic layer, in layer order.
    pub alphas: Vec<Vec<T>>,
}

impl<T: Real> FoldedNetwork<T> {
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward(input)
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn factor_vector(&self) -> Vec<T> {
        self.alphas.concat()
    }
}

/// A feed-forward network mixing expert layers and plain static layers.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicNetwork<T: Real = f64> {
    input_shape: Vec<usize>,
    embed_dim: usize,
    k: usize,
    layers: Vec<DynLayer<T>>,
}

/// Result of folding every expert layer for one forward pass.
struct Folded<T: Real> {
    weights: Vec<Option<LayerParams<T>>>,
    alphas: Vec<Vec<T>>,
}

impl<T: Real> Folded<T> {
    fn refs(&self) -> Vec<WeightRef<'_, T>> {
        self.weights
            .iter()
            .map(|p| p.as_ref().map(|p| (&p.weight.value, &p.bias.value)))
            .collect()
    }
}

impl<T: Real> DynamicNetwork<T> {
    pub fn new(input_shape: Vec<usize>, embed_dim: usize, layers: Vec<DynLayer<T>>) -> Result<Self> {
        let specs: Vec<_> = layers.iter().map(DynLayer::spec).collect();
        chain_shapes(&specs, &input_shape)?;
        let mut k = None;
        for layer in &layers {
            match layer {
                DynLayer::Expert(l) => {
                    let l = ExpertLayer::new(l.spec, l.experts.clone(), l.bias.clone(), l.controllers.clone())?;
                    if l.embed_dim() != embed_dim {
                        return Err(Error::shape("controller dimension", embed_dim, l.embed_dim()));
                    }
                    if *k.get_or_insert(l.k()) != l.k() {
                        return Err(Error::InvalidArgument("all expert layers must share K".into()));
                    }
                }
                DynLayer::Static(l) => {
                    match (&l.params, l.spec.weight_shape()) {
                        (Some(p), Some(shape)) => {
                            p.weight.value.expect_shape("static weight", &shape)?;
                            p.bias.value.expect_shape("static bias", &[l.spec.bias_len().unwrap_or(0)])?;
                        }
                        (None, None) => {}
                        _ => {
                            return Err(Error::InvalidArgument(format!(
                                "parameters do not match layer {:?}",
                                l.spec
                            )))
                        }
                    }
                }
            }
        }
        Ok(Self {
            input_shape,
            embed_dim,
            k: k.unwrap_or(1),
            layers,
        })
    }

    /// Seeded initialisation: layers with `dynamic[i]` become `K`-expert
    /// layers, the rest are He-initialised static layers.
    pub fn init_with<R: Rng + ?Sized>(
        input_shape: Vec<usize>,
        specs: &[LayerSpec],
        dynamic: &[bool],
        k: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dynamic.len() != specs.len() {
            return Err(Error::shape("dynamic mask", specs.len(), dynamic.len()));
        }
        let layers = specs
            .iter()
            .zip(dynamic)
            .map(|(spec, &dynamic)| {
                if dynamic {
                    Ok(DynLayer::Expert(ExpertLayer::init(*spec, k, embed_dim, rng)?))
                } else {
                    Ok(DynLayer::Static(StaticLayer {
                        spec: *spec,
                        params: spec.init_params(1.0, rng),
                    }))
                }
            })
            .collect::<Result<_>>()?;
        Self::new(input_shape, embed_dim, layers)
    }

    /// Convolutions are dynamic; everything else (the head) is static.
    pub fn init<R: Rng + ?Sized>(
        input_shape: Vec<usize>,
        specs: &[LayerSpec],
        k: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mask: Vec<bool> = specs.iter().map(|s| matches!(s, LayerSpec::Conv { .. })).collect();
        Self::init_with(input_shape, specs, &mask, k, embed_dim, rng)
    }

    /// Single-expert network whose experts are the weights of `net`, for the
    /// layers selected by `dynamic`; controllers start at zero.
    pub fn from_static(net: &Sequential<T>, dynamic: &[bool], embed_dim: usize) -> Result<Self> {
        if dynamic.len() != net.layers().len() {
            return Err(Error::shape("dynamic mask", net.layers().len(), dynamic.len()));
        }
        let layers = net
            .layers()
            .iter()
            .zip(dynamic)
            .map(|(l, &dynamic)| match (&l.params, dynamic) {
                (Some(p), true) => Ok(DynLayer::Expert(ExpertLayer::new(
                    l.spec,
                    vec![Parameter::new(p.weight.value.clone())],
                    Parameter::new(p.bias.value.clone()),
                    vec![super::ControllerParams::zeros(embed_dim)],
                )?)),
                (None, true) => Err(Error::InvalidArgument(format!("layer {:?} cannot be dynamic", l.spec))),
                _ => Ok(DynLayer::Static(l.clone())),
            })
            .collect::<Result<_>>()?;
        Self::new(net.input_shape().to_vec(), embed_dim, layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Experts per dynamic layer.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn layers(&self) -> &[DynLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DynLayer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(DynLayer::spec).collect()
    }

    pub fn expert_layers(&self) -> impl Iterator<Item = &ExpertLayer<T>> {
        self.layers.iter().filter_map(|l| match l {
            DynLayer::Expert(e) => Some(e),
            DynLayer::Static(_) => None,
        })
    }

    pub fn dynamic_layer_count(&self) -> usize {
        self.expert_layers().count()
    }

    /// Every stored parameter, experts and controllers included.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                DynLayer::Expert(e) => e.param_count(),
                DynLayer::Static(s) => s.spec.param_count(),
            })
            .sum()
    }

    /// Parameters of any folded network; equal to the static architecture.
    pub fn inference_param_count(&self) -> usize {
        self.specs().iter().map(LayerSpec::param_count).sum()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.rank() < 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(
                "forward_dynamic",
                format!("[B, {:?}]", self.input_shape),
                format!("{:?}", input.shape()),
            ));
        }
        Ok(())
    }

    fn fold_all(&self, embedding: &Tensor<T>) -> Result<Folded<T>> {
        if !embedding.is_finite() {
            return Err(Error::InvalidArgument("non-finite embedding".into()));
        }
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut alphas = Vec::new();
        for layer in &self.layers {
            match layer {
                DynLayer::Expert(e) => {
                    let (w, a) = fold_layer(e, embedding)?;
                    weights.push(Some(LayerParams {
                        weight: Parameter::new(w),
                        bias: Parameter::new(e.bias.value.clone()),
                    }));
                    alphas.push(a);
                }
                DynLayer::Static(s) => weights.push(s.params.clone()),
            }
        }
        Ok(Folded { weights, alphas })
    }

    /// Factors of every expert layer, layer order then expert order.
    pub fn factor_vector(&self, embedding_or_feature: &Tensor<T>) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(self.dynamic_layer_count() * self.k);
        for e in self.expert_layers() {
            out.extend(e.alphas(embedding_or_feature)?);
        }
        Ok(out)
    }

    pub fn fold(&self, embedding: &Tensor<T>, domain: Option<usize>) -> Result<FoldedNetwork<T>> {
        let folded = self.fold_all(embedding)?;
        let layers = self
            .layers
            .iter()
            .zip(folded.weights)
            .map(|(l, params)| StaticLayer { spec: l.spec(), params })
            .collect();
        Ok(FoldedNetwork {
            net: Sequential::new(self.input_shape.clone(), layers)?,
            provenance: Provenance {
                domain,
                fingerprint: embedding_fingerprint(embedding),
            },
            alphas: folded.alphas,
        })
    }

    /// Runs the network, recombining each expert layer's weight on the way.
    pub fn forward_dynamic(&self, embedding: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                DynLayer::Expert(e) => {
                    let (w, _) = fold_layer(e, embedding)?;
                    forward_layer(&e.spec, Some((&w, &e.bias.value)), &x)?
                }
                DynLayer::Static(s) => forward_layer(&s.spec, s.weights(), &x)?,
            };
        }
        Ok(x)
    }

    /// Per-sample conditioning: row `b` of `input` is run through the network
    /// folded at `features[b]`.
    pub fn forward_per_sample(&self, features: &[Tensor<T>], input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        if features.len() != input.dim(0) {
            return Err(Error::shape("forward_per_sample", input.dim(0), features.len()));
        }
        let mut rows = Vec::with_capacity(features.len());
        for (b, f) in features.iter().enumerate() {
            rows.push(self.forward_dynamic(f, &input.slice_rows(b, 1)?)?);
        }
        let refs: Vec<&Tensor<T>> = rows.iter().collect();
        let stacked = Tensor::stack(&refs)?;
        let mut shape = vec![features.len()];
        shape.extend_from_slice(&rows[0].shape()[1..]);
        stacked.reshape(shape)
    }

    /// Mean cross-entropy of a batch whose rows are split into groups that
    /// share one conditioning vector; accumulates every gradient.
    ///
    /// `groups[g] = (embedding, rows)` where `rows` index into `input`; each
    /// row must appear in exactly one group.
    pub fn accumulate_gradients(
        &mut self,
        input: &Tensor<T>,
        labels: &[usize],
        groups: &[(&Tensor<T>, Vec<usize>)],
    ) -> Result<T> {
        self.check_input(input)?;
        let batch = input.dim(0);
        if labels.len() != batch {
            return Err(Error::shape("labels", batch, labels.len()));
        }
        let mut seen = vec![false; batch];
        for (_, rows) in groups {
            for &r in rows {
                if r >= batch || std::mem::replace(&mut seen[r], true) {
                    return Err(Error::InvalidArgument("batch groups must partition the rows".into()));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("batch groups must partition the rows".into()));
        }
        let specs = self.specs();
        let mut recorded = Vec::with_capacity(groups.len());
        let mut logits: Option<Tensor<T>> = None;
        for (embedding, rows) in groups {
            let folded = self.fold_all(embedding)?;
            let mut tape = Tape::new();
            let x = if rows.len() == batch && rows.iter().enumerate().all(|(i, &r)| i == r) {
                input.clone()
            } else {
                input.select_rows(rows)?
            };
            let out = run_layers(&specs, &folded.refs(), x, Some(&mut tape))?;
            let classes = out.dim(1);
            let all = logits.get_or_insert_with(|| Tensor::zeros(vec![batch, classes]));
            for (i, &r) in rows.iter().enumerate() {
                all.data_mut()[r * classes..(r + 1) * classes]
                    .copy_from_slice(&out.data()[i * classes..(i + 1) * classes]);
            }
            recorded.push((folded, tape));
        }
        let logits = logits.ok_or_else(|| Error::InvalidArgument("no batch groups".into()))?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        for ((embedding, rows), (folded, tape)) in groups.iter().zip(&recorded) {
            let g = if rows.len() == batch && rows.iter().enumerate().all(|(i, &r)| i == r) {
                grad.clone()
            } else {
                grad.select_rows(rows)?
            };
            let (grads, _) = backprop_layers(&specs, &folded.refs(), tape, &g)?;
            let mut dyn_index = 0;
            for (layer, lg) in self.layers.iter_mut().zip(grads) {
                match (layer, lg) {
                    (DynLayer::Expert(e), Some((gw, gb))) => {
                        e.accumulate_fold_grad(embedding, &folded.alphas[dyn_index], &gw, &gb)?;
                        dyn_index += 1;
                    }
                    (DynLayer::Static(s), Some((gw, gb))) => {
                        if let Some(p) = s.params.as_mut() {
                            p.weight.grad.add_scaled(T::one(), &gw)?;
                            p.bias.grad.add_scaled(T::one(), &gb)?;
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(loss)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            match layer {
                DynLayer::Expert(e) => e.zero_grad(),
                DynLayer::Static(s) => {
                    if let Some(p) = s.params.as_mut() {
                        p.weight.zero_grad();
                        p.bias.zero_grad();
                    }
                }
            }
        }
    }

    /// Trainable parameters in a fixed order: per layer, experts (or weight),
    /// bias, then controller weight/bias pairs unless `with_controllers` is false.
    pub fn parameters_mut(&mut self, with_controllers: bool) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                DynLayer::Expert(e) => {
                    out.extend(e.experts.iter_mut());
                    out.push(&mut e.bias);
                    if with_controllers {
                        for c in &mut e.controllers {
                            out.push(&mut c.weight);
                            out.push(&mut c.bias);
                        }
                    }
                }
                DynLayer::Static(s) => {
                    if let Some(p) = s.params.as_mut() {
                        out.push(&mut p.weight);
                        out.push(&mut p.bias);
                    }
                }
            }
        }
        out
    }

    /// Weight tensors subject to weight decay: experts and static weights.
    pub fn decayed_parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                DynLayer::Expert(e) => out.extend(e.experts.iter_mut()),
                DynLayer::Static(s) => {
                    if let Some(p) = s.params.as_mut() {
                        out.push(&mut p.weight);
                    }
                }
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> DynamicNetwork<U> {
        DynamicNetwork {
            input_shape: self.input_shape.clone(),
            embed_dim: self.embed_dim,
            k: self.k,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    DynLayer::Expert(e) => DynLayer::Expert(e.cast()),
                    DynLayer::Static(s) => DynLayer::Static(StaticLayer {
                        spec: s.spec,
                        params: s.params.as_ref().map(LayerParams::cast),
                    }),
                })
                .collect(),
        }
    }
}

/// Free-function form of [`DynamicNetwork::fold`].
pub fn fold_network<T: Real>(net: &DynamicNetwork<T>, embedding: &Tensor<T>) -> Result<FoldedNetwork<T>> {
    net.fold(embedding, None)
}

/// Free-function form of [`DynamicNetwork::forward_dynamic`].
pub fn forward_dynamic<T: Real>(net: &DynamicNetwork<T>, embedding: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    net.forward_dynamic(embedding, input)
}

/// Free-function form of [`DynamicNetwork::factor_vector`].
pub fn export_factor_vector<T: Real>(net: &DynamicNetwork<T>, embedding_or_feature: &Tensor<T>) -> Result<Vec<T>> {
    net.factor_vector(embedding_or_feature)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::numerics::Activation;
    use crate::seed;

    fn specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv {
                in_channels: 2,
                out_channels: 4,
                kernel: 3,
                stride: 1,
                pad: 1,
                act: Activation::Relu,
            },
            LayerSpec::Conv {
                in_channels: 4,
                out_channels: 3,
                kernel: 3,
                stride: 2,
                pad: 1,
                act: Activation::Relu,
            },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense {
                inputs: 3,
                outputs: 5,
                act: Activation::Identity,
            },
        ]
    }

    fn random(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = seed::rng(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn randomise_controllers(net: &mut DynamicNetwork, seed: u64) {
        let mut rng = seed::rng(seed);
        for l in net.layers_mut() {
            if let DynLayer::Expert(e) = l {
                for c in &mut e.controllers {
                    c.weight.value.data_mut().iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
                    c.bias.value.data_mut()[0] = rng.gen_range(-1.0..1.0);
                }
            }
        }
    }

    #[test]
    fn folding_is_deterministic_and_keeps_static_size() {
        let net = DynamicNetwork::init(vec![2, 6, 6], &specs(), 2, 4, &mut seed::rng(1)).unwrap();
        let e = random(vec![4], 2);
        let a = net.fold(&e, Some(3)).unwrap();
        assert_eq!(a, net.fold(&e, Some(3)).unwrap());
        let baseline = Sequential::<f64>::init(vec![2, 6, 6], &specs(), &mut seed::rng(9)).unwrap();
        assert_eq!(a.param_count(), baseline.param_count());
        assert_eq!(net.inference_param_count(), baseline.param_count());
    }

    #[test]
    fn total_parameter_count_matches_formula() {
        for k in [1, 2, 4] {
            let net = DynamicNetwork::<f64>::init(vec![2, 6, 6], &specs(), k, 7, &mut seed::rng(1)).unwrap();
            let static_count = net.inference_param_count();
            let dyn_weights = 4 * 2 * 9 + 3 * 4 * 9;
            assert_eq!(net.param_count(), static_count + (k - 1) * dyn_weights + k * (7 + 1) * 2);
        }
    }

    #[test]
    fn zero_second_expert_reduces_to_first() {
        let mut net = DynamicNetwork::init(vec![2, 6, 6], &specs(), 2, 4, &mut seed::rng(5)).unwrap();
        let mut layers = Vec::new();
        for l in net.layers_mut() {
            match l {
                DynLayer::Expert(e) => {
                    e.experts[1].value.fill(0.0);
                    e.controllers[0].bias.value.data_mut()[0] = 40.0;
                    e.bias.value.data_mut().iter_mut().enumerate().for_each(|(i, b)| *b = 0.01 * i as f64);
                    layers.push(StaticLayer {
                        spec: e.spec,
                        params: Some(LayerParams {
                            weight: Parameter::new(e.experts[0].value.clone()),
                            bias: Parameter::new(e.bias.value.clone()),
                        }),
                    });
                }
                DynLayer::Static(s) => layers.push(s.clone()),
            }
        }
        let reference = Sequential::new(vec![2, 6, 6], layers).unwrap();
        let folded = fold_network(&net, &random(vec![4], 1)).unwrap();
        for i in 0..10 {
            let x = random(vec![1, 2, 6, 6], 100 + i);
            let diff = folded.forward(&x).unwrap().max_abs_diff(&reference.forward(&x).unwrap()).unwrap();
            assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let net = DynamicNetwork::init(vec![2, 6, 6], &specs()[..3], 2, 4, &mut seed::rng(3)).unwrap();
        let out = net.forward_dynamic(&random(vec![4], 4), &Tensor::zeros(vec![2, 2, 6, 6])).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn embedding_changes_logits() {
        let mut net = DynamicNetwork::init(vec![2, 6, 6], &specs(), 2, 4, &mut seed::rng(3)).unwrap();
        randomise_controllers(&mut net, 8);
        let x = random(vec![1, 2, 6, 6], 5);
        let a = net.forward_dynamic(&random(vec![4], 6), &x).unwrap();
        let b = net.forward_dynamic(&random(vec![4], 7), &x).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 1e-9);
    }

    #[test]
    fn factor_vector_layout() {
        let net = DynamicNetwork::<f64>::init(vec![2, 6, 6], &specs(), 3, 4, &mut seed::rng(3)).unwrap();
        let v = export_factor_vector(&net, &random(vec![4], 1)).unwrap();
        assert_eq!(v.len(), 2 * 3);
        assert!(v.iter().all(|&a| a == 0.5));
    }

    #[test]
    fn per_sample_forward_matches_individual_folds() {
        let mut net = DynamicNetwork::init(vec![2, 6, 6], &specs(), 2, 4, &mut seed::rng(3)).unwrap();
        randomise_controllers(&mut net, 1);
        let x = random(vec![3, 2, 6, 6], 2);
        let feats: Vec<_> = (0..3).map(|i| random(vec![4], 10 + i)).collect();
        let out = net.forward_per_sample(&feats, &x).unwrap();
        for (b, f) in feats.iter().enumerate() {
            let row = net.fold(f, None).unwrap().forward(&x.slice_rows(b, 1).unwrap()).unwrap();
            assert!(row.max_abs_diff(&out.slice_rows(b, 1).unwrap()).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn bad_groups_are_rejected() {
        let mut net = DynamicNetwork::init(vec![2, 6, 6], &specs(), 2, 4, &mut seed::rng(3)).unwrap();
        let x = random(vec![2, 2, 6, 6], 2);
        let e = random(vec![4], 1);
        assert!(net.accumulate_gradients(&x, &[0, 1], &[(&e, vec![0])]).is_err());
        assert!(net.accumulate_gradients(&x, &[0, 1], &[(&e, vec![0, 0, 1])]).is_err());
        assert!(net.accumulate_gradients(&x, &[0, 1], &[(&e, vec![1]), (&e, vec![0])]).is_ok());
    }

    #[test]
    fn mixed_expert_counts_are_rejected() {
        let mut rng = seed::rng(1);
        let s = specs();
        let layers = vec![
            DynLayer::Expert(ExpertLayer::<f64>::init(s[0], 2, 4, &mut rng).unwrap()),
            DynLayer::Expert(ExpertLayer::init(s[1], 3, 4, &mut rng).unwrap()),
            DynLayer::Static(StaticLayer { spec: s[2], params: None }),
            DynLayer::Static(StaticLayer {
                spec: s[3],
                params: s[3].init_params(1.0, &mut rng),
            }),
        ];
        assert!(DynamicNetwork::new(vec![2, 6, 6], 4, layers).is_err());
    }
}
