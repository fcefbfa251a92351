use std::sync::Arc;

use super::detector::cosine_distance;
use crate::dynnet::FoldedNetwork;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Default number of folded networks kept.
pub const DEFAULT_CAPACITY: usize = 8;

#[derive(Clone, Debug)]
pub struct CacheEntry<T: Real> {
    pub fingerprint: String,
    pub embedding: Tensor<f64>,
    pub net: Arc<FoldedNetwork<T>>,
}

/// Least-recently-used store of folded networks keyed by embedding fingerprint.
#[derive(Clone, Debug)]
pub struct FoldCache<T: Real = f64> {
    capacity: usize,
    /// Most recently used last.
    entries: Vec<CacheEntry<T>>,
}

impl<T: Real> FoldCache<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("cache capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            entries: Vec::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn touch(&mut self, pos: usize) -> Arc<FoldedNetwork<T>> {
        let entry = self.entries.remove(pos);
        let net = Arc::clone(&entry.net);
        self.entries.push(entry);
        net
    }

    /// Exact fingerprint lookup; marks the entry as most recently used.
    pub fn get(&mut self, fingerprint: &str) -> Option<Arc<FoldedNetwork<T>>> {
        let pos = self.entries.iter().position(|e| e.fingerprint == fingerprint)?;
        Some(self.touch(pos))
    }

    /// Closest cached embedding within cosine distance `rho`.
    pub fn get_near(&mut self, embedding: &Tensor<f64>, rho: f64) -> Option<Arc<FoldedNetwork<T>>> {
        let (pos, dist) = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, cosine_distance(&e.embedding, embedding)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        (dist <= rho).then(|| self.touch(pos))
    }

    /// Inserts as most recently used, evicting the least recently used entry
    /// when full. Returns the evicted fingerprint.
    pub fn insert(&mut self, embedding: Tensor<f64>, net: Arc<FoldedNetwork<T>>) -> Option<String> {
        let fingerprint = net.provenance.fingerprint.clone();
        if let Some(pos) = self.entries.iter().position(|e| e.fingerprint == fingerprint) {
            self.entries.remove(pos);
        }
        let evicted = (self.entries.len() == self.capacity).then(|| self.entries.remove(0).fingerprint);
        self.entries.push(CacheEntry {
            fingerprint,
            embedding,
            net,
        });
        evicted
    }

    pub fn fingerprints(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.fingerprint.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynnet::{FoldedNetwork, Provenance};
    use crate::numerics::Sequential;

    fn entry(fp: &str) -> Arc<FoldedNetwork> {
        Arc::new(FoldedNetwork {
            net: Sequential::new(vec![2], vec![]).unwrap(),
            provenance: Provenance {
                domain: None,
                fingerprint: fp.into(),
            },
            alphas: vec![],
        })
    }

    fn v(x: &[f64]) -> Tensor<f64> {
        Tensor::vector(x.to_vec()).unwrap()
    }

    #[test]
    fn evicts_least_recently_used() {
        let mut c = FoldCache::new(2).unwrap();
        assert!(c.insert(v(&[1.0, 0.0]), entry("a")).is_none());
        assert!(c.insert(v(&[0.0, 1.0]), entry("b")).is_none());
        assert!(c.get("a").is_some());
        assert_eq!(c.insert(v(&[1.0, 1.0]), entry("c")), Some("b".to_string()));
        assert_eq!(c.fingerprints(), vec!["a", "c"]);
        assert!(c.len() <= c.capacity());
    }

    #[test]
    fn near_lookup_respects_threshold() {
        let mut c = FoldCache::new(4).unwrap();
        c.insert(v(&[1.0, 0.0]), entry("a"));
        c.insert(v(&[0.0, 1.0]), entry("b"));
        let hit = c.get_near(&v(&[1.0, 0.05]), 0.15).unwrap();
        assert_eq!(hit.provenance.fingerprint, "a");
        assert!(c.get_near(&v(&[1.0, 1.0]), 0.15).is_none());
    }

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(FoldCache::<f64>::new(0).is_err());
    }

    #[test]
    fn capacity_one_keeps_only_latest() {
        let mut c = FoldCache::new(1).unwrap();
        c.insert(v(&[1.0, 0.0]), entry("a"));
        c.insert(v(&[0.0, 1.0]), entry("b"));
        assert!(c.get("a").is_none());
        assert!(c.get("b").is_some());
    }
}
