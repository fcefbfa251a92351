use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::cache::{FoldCache, DEFAULT_CAPACITY};
use super::detector::{cosine_distance, DetectorConfig, DomainDetector, Observation};
use crate::dynnet::{embedding_fingerprint, DynamicNetwork, FoldedNetwork};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EngineConfig {
    pub detector: DetectorConfig,
    pub capacity: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            capacity: DEFAULT_CAPACITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Fold,
    CacheHit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEvent {
    /// Stream index of the frame that triggered the swap.
    pub frame: usize,
    pub kind: EventKind,
    pub domain: Option<usize>,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput<T: Real> {
    pub frame: usize,
    pub logits: Tensor<T>,
    /// Fingerprint of the folded network that produced `logits`.
    pub fingerprint: String,
}

/// Holder of the active folded network. Swaps replace the `Arc` under a
/// short write lock; readers that already cloned the old `Arc` keep using it.
#[derive(Debug, Default)]
pub struct Snapshot<T: Real> {
    current: RwLock<Option<Arc<FoldedNetwork<T>>>>,
}

impl<T: Real> Snapshot<T> {
    pub fn load(&self) -> Option<Arc<FoldedNetwork<T>>> {
        self.current.read().expect("snapshot lock").clone()
    }

    fn store(&self, net: Arc<FoldedNetwork<T>>) {
        *self.current.write().expect("snapshot lock") = Some(net);
    }
}

/// Folds a dynamic network on demand while watching the input stream for
/// domain changes, and runs every frame through the active folded network.
pub struct StreamEngine<T: Real = f32> {
    net: DynamicNetwork<T>,
    cache: FoldCache<T>,
    detector: DomainDetector,
    /// Known domain embeddings indexed by domain id.
    catalog: Vec<Tensor<f64>>,
    active: Arc<Snapshot<T>>,
    pending: Vec<(usize, Tensor<T>)>,
    events: Vec<StreamEvent>,
    next_frame: usize,
}

impl<T: Real> StreamEngine<T> {
    pub fn new(net: DynamicNetwork<T>, config: EngineConfig, initial: Option<Tensor<f64>>) -> Result<Self> {
        let detector = DomainDetector::new(config.detector, net.embed_dim(), initial.clone())?;
        let mut engine = Self {
            cache: FoldCache::new(config.capacity)?,
            net,
            detector,
            catalog: Vec::new(),
            active: Arc::new(Snapshot {
                current: RwLock::new(None),
            }),
            pending: Vec::new(),
            events: Vec::new(),
            next_frame: 0,
        };
        if let Some(e) = initial {
            engine.activate(e, None, 0, true)?;
        }
        Ok(engine)
    }

    /// Detected embeddings within `rho` of a catalog entry are replaced by
    /// that entry, and the known-domain path looks embeddings up here.
    pub fn with_catalog(mut self, catalog: Vec<Tensor<f64>>) -> Result<Self> {
        for e in &catalog {
            e.expect_shape("catalog embedding", &[self.net.embed_dim()])?;
        }
        self.catalog = catalog;
        Ok(self)
    }

    pub fn events(&self) -> &[StreamEvent] {
        &self.events
    }

    pub fn fold_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Fold).count()
    }

    pub fn snapshot(&self) -> Arc<Snapshot<T>> {
        Arc::clone(&self.active)
    }

    pub fn detector(&self) -> &DomainDetector {
        &self.detector
    }

    fn snap(&self, embedding: &Tensor<f64>) -> Option<usize> {
        self.catalog
            .iter()
            .enumerate()
            .map(|(i, c)| (i, cosine_distance(c, embedding)))
            .filter(|&(_, d)| d <= self.detector.config().rho)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    fn activate(&mut self, embedding: Tensor<f64>, domain: Option<usize>, frame: usize, exact: bool) -> Result<()> {
        let (embedding, domain, exact) = match (domain, self.snap(&embedding)) {
            (None, Some(tau)) => (self.catalog[tau].clone(), Some(tau), true),
            _ => (embedding, domain, exact),
        };
        let cast = embedding.cast::<T>();
        let fingerprint = embedding_fingerprint(&cast);
        let hit = match self.cache.get(&fingerprint) {
            Some(net) => Some(net),
            None if !exact => self.cache.get_near(&embedding, self.detector.config().rho),
            None => None,
        };
        let (net, kind) = match hit {
            Some(net) => (net, EventKind::CacheHit),
            None => {
                let net = Arc::new(self.net.fold(&cast, domain)?);
                self.cache.insert(embedding, Arc::clone(&net));
                (net, EventKind::Fold)
            }
        };
        self.events.push(StreamEvent {
            frame,
            kind,
            domain: net.provenance.domain,
            fingerprint: net.provenance.fingerprint.clone(),
        });
        self.active.store(net);
        Ok(())
    }

    fn run(&self, frame: usize, input: &Tensor<T>) -> Result<FrameOutput<T>> {
        let net = self
            .active
            .load()
            .ok_or_else(|| Error::InvalidArgument("no active folded network".into()))?;
        let mut shape = vec![1];
        shape.extend_from_slice(self.net.input_shape());
        let x = input.clone().reshape(shape)?;
        Ok(FrameOutput {
            frame,
            logits: net.forward(&x)?,
            fingerprint: net.provenance.fingerprint.clone(),
        })
    }

    fn flush(&mut self, out: &mut Vec<FrameOutput<T>>) -> Result<()> {
        for (frame, input) in std::mem::take(&mut self.pending) {
            out.push(self.run(frame, &input)?);
        }
        Ok(())
    }

    /// Observes one frame's feature and returns the frames whose logits became
    /// available: none while the first window fills, all buffered frames once
    /// the first domain is established, and otherwise just this frame.
    pub fn process(&mut self, feature: &Tensor<f64>, input: &Tensor<T>) -> Result<Vec<FrameOutput<T>>> {
        if input.len() != self.net.input_shape().iter().product::<usize>() {
            return Err(Error::shape(
                "stream frame",
                format!("{:?}", self.net.input_shape()),
                format!("{:?}", input.shape()),
            ));
        }
        let frame = self.next_frame;
        self.next_frame += 1;
        match self.detector.observe(feature)? {
            Observation::Pending => {
                self.pending.push((frame, input.clone()));
                return Ok(Vec::new());
            }
            Observation::DomainChanged(e) => self.activate(e, None, frame, false)?,
            Observation::Stable => {}
        }
        let mut out = Vec::with_capacity(self.pending.len() + 1);
        self.flush(&mut out)?;
        out.push(self.run(frame, input)?);
        Ok(out)
    }

    /// Known-attribute fast path: the caller names the domain, bypassing the detector.
    pub fn process_known(&mut self, domain: usize, input: &Tensor<T>) -> Result<FrameOutput<T>> {
        let embedding = self.catalog.get(domain).ok_or(Error::UnknownDomain(domain))?.clone();
        let frame = self.next_frame;
        self.next_frame += 1;
        let current = self.active.load().and_then(|n| n.provenance.domain);
        if current != Some(domain) {
            self.activate(embedding, Some(domain), frame, true)?;
        }
        self.run(frame, input)
    }

    /// Runs frames still buffered at the end of a short stream, folding at
    /// the mean of what was seen.
    pub fn finish(&mut self) -> Result<Vec<FrameOutput<T>>> {
        let mut out = Vec::new();
        if self.pending.is_empty() {
            return Ok(out);
        }
        if self.active.load().is_none() {
            let mean = self.detector.window_mean().expect("pending frames were observed");
            let frame = self.pending[0].0;
            self.activate(mean, None, frame, false)?;
        }
        self.flush(&mut out)?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamOutput<T: Real> {
    /// In frame order.
    pub frames: Vec<FrameOutput<T>>,
    pub events: Vec<StreamEvent>,
}

/// Runs a whole pre-encoded stream through `engine`.
pub fn stream_infer<T: Real>(
    engine: &mut StreamEngine<T>,
    features: &[Tensor<f64>],
    inputs: &[Tensor<T>],
) -> Result<StreamOutput<T>> {
    if features.len() != inputs.len() {
        return Err(Error::shape("stream", features.len(), inputs.len()));
    }
    let mut frames = Vec::with_capacity(inputs.len());
    for (f, x) in features.iter().zip(inputs) {
        frames.extend(engine.process(f, x)?);
    }
    frames.extend(engine.finish()?);
    Ok(StreamOutput {
        frames,
        events: engine.events().to_vec(),
    })
}
