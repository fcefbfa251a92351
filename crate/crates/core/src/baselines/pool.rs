use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::static_net::train_static;
use crate::domains::{AttributeSchema, Dataset, DomainPartition, MIN_SPECIALIZE_SAMPLES};
use crate::dynnet::{load_checkpoint, save_checkpoint, Checkpoint, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::{Sequential, Tensor};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub enum PoolModel {
    Specialized(Sequential),
    UsesBase,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub tau: usize,
    /// Key attribute name → value of this domain.
    pub attrs: BTreeMap<String, String>,
    pub model: PoolModel,
}

/// A base network plus one finetuned copy per sufficiently large domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPool {
    pub base: Sequential,
    /// Indexed by `tau`.
    pub entries: Vec<PoolEntry>,
}

/// Attribute map of domain `tau`.
pub fn domain_attrs(schema: &AttributeSchema, partition: &DomainPartition, tau: usize) -> BTreeMap<String, String> {
    partition
        .keys()
        .iter()
        .cloned()
        .zip(partition.tuple_names(schema, tau))
        .collect()
}

/// Finetunes a clone of `base` on every domain with at least `min_samples`
/// members; smaller domains route to `base`. Domains train on separate threads;
/// each uses a seed derived from `cfg.seed` and its `tau`.
pub fn build_model_pool(
    base: &Sequential,
    dataset: &Dataset,
    partition: &DomainPartition,
    cfg: &TrainConfig,
    min_samples: usize,
) -> Result<ModelPool> {
    cfg.validate()?;
    let models: Vec<Result<PoolModel>> = std::thread::scope(|scope| {
        let handles: Vec<_> = partition
            .groups()
            .iter()
            .map(|g| {
                scope.spawn(move || {
                    if g.members.len() < min_samples {
                        return Ok(PoolModel::UsesBase);
                    }
                    let mut net = base.clone();
                    let cfg = TrainConfig {
                        seed: seed::derive(cfg.seed, g.tau as u64),
                        ..cfg.clone()
                    };
                    train_static(&mut net, dataset, &g.members, &cfg)?;
                    Ok(PoolModel::Specialized(net))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("finetune thread")).collect()
    });
    let entries = models
        .into_iter()
        .enumerate()
        .map(|(tau, model)| {
            Ok(PoolEntry {
                tau,
                attrs: domain_attrs(&dataset.schema, partition, tau),
                model: model?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ModelPool {
        base: base.clone(),
        entries,
    })
}

/// Pool with the default specialisation threshold.
pub fn build_default_pool(
    base: &Sequential,
    dataset: &Dataset,
    partition: &DomainPartition,
    cfg: &TrainConfig,
) -> Result<ModelPool> {
    build_model_pool(base, dataset, partition, cfg, MIN_SPECIALIZE_SAMPLES)
}

impl ModelPool {
    pub fn route(&self, tau: usize) -> Result<&Sequential> {
        let entry = self.entries.get(tau).ok_or(Error::UnknownDomain(tau))?;
        Ok(match &entry.model {
            PoolModel::Specialized(net) => net,
            PoolModel::UsesBase => &self.base,
        })
    }

    pub fn specialized_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.model, PoolModel::Specialized(_)))
            .count()
    }

    /// Networks that must be kept: every specialist, plus the base if any
    /// domain routes to it.
    pub fn stored_count(&self) -> usize {
        let uses_base = self.entries.iter().any(|e| e.model == PoolModel::UsesBase);
        self.specialized_count() + usize::from(uses_base)
    }

    pub fn total_param_count(&self) -> usize {
        self.stored_count() * self.base.param_count()
    }

    pub fn inference_param_count(&self) -> usize {
        self.base.param_count()
    }
}

pub fn pool_infer(pool: &ModelPool, tau: usize, input: &Tensor<f64>) -> Result<Tensor<f64>> {
    pool.route(tau)?.forward(input)
}

/// On-disk pool layout: checkpoint file names relative to the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub base_checkpoint: String,
    pub entries: Vec<PoolManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolManifestEntry {
    pub tau: usize,
    pub attrs: BTreeMap<String, String>,
    /// A checkpoint file name, or `"base"`.
    pub checkpoint: String,
}

const BASE_MARKER: &str = "base";

fn check_file_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with("..") {
        return Err(Error::format("pool manifest", format!("{name:?} is not a bare file name")));
    }
    Ok(())
}

impl PoolManifest {
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let manifest: Self = serde_json::from_slice(bytes)?;
        check_file_name(&manifest.base_checkpoint)?;
        for (pos, e) in manifest.entries.iter().enumerate() {
            if e.tau != pos {
                return Err(Error::format("pool manifest", format!("entry {pos} has tau {}", e.tau)));
            }
            if e.checkpoint != BASE_MARKER {
                check_file_name(&e.checkpoint)?;
            }
        }
        Ok(manifest)
    }
}

fn expect_static(ckpt: Checkpoint, path: &Path) -> Result<Sequential> {
    match ckpt {
        Checkpoint::Static(net) => Ok(net),
        Checkpoint::Dynamic { .. } => Err(Error::format("pool", format!("{} is not a static checkpoint", path.display()))),
    }
}

/// Writes `pool.json`, `base.ckpt` and one `domain-<tau>.ckpt` per specialist
/// into `dir`; returns the manifest path.
pub fn save_pool(pool: &ModelPool, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let base_checkpoint = "base.ckpt".to_string();
    save_checkpoint(&dir.join(&base_checkpoint), &Checkpoint::Static(pool.base.clone()))?;
    let mut entries = Vec::with_capacity(pool.entries.len());
    for e in &pool.entries {
        let checkpoint = match &e.model {
            PoolModel::Specialized(net) => {
                let name = format!("domain-{}.ckpt", e.tau);
                save_checkpoint(&dir.join(&name), &Checkpoint::Static(net.clone()))?;
                name
            }
            PoolModel::UsesBase => BASE_MARKER.to_string(),
        };
        entries.push(PoolManifestEntry {
            tau: e.tau,
            attrs: e.attrs.clone(),
            checkpoint,
        });
    }
    let path = dir.join("pool.json");
    let json = serde_json::to_vec_pretty(&PoolManifest { base_checkpoint, entries })?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_pool(manifest_path: &Path) -> Result<ModelPool> {
    let bytes = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = PoolManifest::from_json_bytes(&bytes)?;
    let base_path = manifest_path.with_file_name(&manifest.base_checkpoint);
    let base = expect_static(load_checkpoint(&base_path)?, &base_path)?;
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        let model = if e.checkpoint == BASE_MARKER {
            PoolModel::UsesBase
        } else {
            let path = manifest_path.with_file_name(&e.checkpoint);
            let net = expect_static(load_checkpoint(&path)?, &path)?;
            if net.specs() != base.specs() || net.input_shape() != base.input_shape() {
                return Err(Error::format("pool", format!("{} differs in architecture from base", path.display())));
            }
            PoolModel::Specialized(net)
        };
        entries.push(PoolEntry {
            tau: e.tau,
            attrs: e.attrs,
            model,
        });
    }
    Ok(ModelPool { base, entries })
}
