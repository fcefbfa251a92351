use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Window length.
pub const DEFAULT_WINDOW: usize = 16;
/// Cosine-distance drift threshold.
pub const DEFAULT_RHO: f64 = 0.15;
/// Consecutive drifting observations needed to declare a change.
pub const DEFAULT_CONSECUTIVE: usize = 4;

/// `1 − cos(a, b)`; `1` when either vector is zero.
pub fn cosine_distance(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorConfig {
    pub window: usize,
    pub rho: f64,
    pub consecutive: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            rho: DEFAULT_RHO,
            consecutive: DEFAULT_CONSECUTIVE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    /// No active embedding yet; the window is still filling.
    Pending,
    Stable,
    DomainChanged(Tensor<f64>),
}

/// Sliding-window domain-change detector over image features.
///
/// Without an initial embedding, the first full window establishes the
/// domain. Afterwards a change is declared once the window mean has been more
/// than `rho` (cosine distance) from the active embedding for `consecutive`
/// observations in a row. The new embedding is the mean of the observations
/// since drifting began, and the window restarts from those observations so
/// that frames of the old domain do not leak into the new one.
#[derive(Clone, Debug)]
pub struct DomainDetector {
    config: DetectorConfig,
    dim: usize,
    window: VecDeque<Tensor<f64>>,
    active: Option<Tensor<f64>>,
    drifting: usize,
}

impl DomainDetector {
    pub fn new(config: DetectorConfig, dim: usize, initial: Option<Tensor<f64>>) -> Result<Self> {
        if config.window == 0 || config.consecutive == 0 || config.consecutive > config.window {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= consecutive <= window, got {} and {}",
                config.consecutive, config.window
            )));
        }
        if !(config.rho >= 0.0 && config.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid drift threshold {}", config.rho)));
        }
        if let Some(e) = &initial {
            e.expect_shape("initial embedding", &[dim])?;
        }
        Ok(Self {
            config,
            dim,
            window: VecDeque::with_capacity(config.window),
            active: initial,
            drifting: 0,
        })
    }

    pub fn config(&self) -> DetectorConfig {
        self.config
    }

    pub fn active(&self) -> Option<&Tensor<f64>> {
        self.active.as_ref()
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Mean of the window, computed around the oldest entry so that a window
    /// of identical features yields that feature exactly.
    pub fn window_mean(&self) -> Option<Tensor<f64>> {
        mean_of(self.window.iter())
    }

    pub fn observe(&mut self, feature: &Tensor<f64>) -> Result<Observation> {
        feature.expect_shape("observe", &[self.dim])?;
        if !feature.is_finite() {
            return Err(Error::InvalidArgument("non-finite feature".into()));
        }
        if self.window.len() == self.config.window {
            self.window.pop_front();
        }
        self.window.push_back(feature.clone());
        let mean = self.window_mean().expect("window is non-empty");
        let Some(active) = &self.active else {
            if self.window.len() < self.config.window {
                return Ok(Observation::Pending);
            }
            self.active = Some(mean.clone());
            return Ok(Observation::DomainChanged(mean));
        };
        if cosine_distance(&mean, active) > self.config.rho {
            self.drifting += 1;
        } else {
            self.drifting = 0;
        }
        if self.drifting < self.config.consecutive {
            return Ok(Observation::Stable);
        }
        let keep = self.drifting.min(self.window.len());
        self.window.drain(..self.window.len() - keep);
        let fresh = self.window_mean().expect("window is non-empty");
        self.active = Some(fresh.clone());
        self.drifting = 0;
        Ok(Observation::DomainChanged(fresh))
    }
}

fn mean_of<'a>(items: impl Iterator<Item = &'a Tensor<f64>> + Clone) -> Option<Tensor<f64>> {
    let mut iter = items.clone();
    let shift = iter.next()?.clone();
    let mut acc = vec![0.0; shift.len()];
    let mut n = 0usize;
    for t in items {
        for ((a, &x), &s) in acc.iter_mut().zip(t.data()).zip(shift.data()) {
            *a += x - s;
        }
        n += 1;
    }
    let data = shift
        .data()
        .iter()
        .zip(&acc)
        .map(|(&s, &a)| s + a / n as f64)
        .collect();
    Some(Tensor::new(shift.shape().to_vec(), data).expect("same shape"))
}
