//! Comparison systems: a single static network, a pool of per-domain
//! finetuned networks, and the sample-conditioned dynamic network.

mod pool;
mod predictor;
mod sdn;
mod static_net;

pub use pool::{
    build_default_pool, build_model_pool, domain_attrs, load_pool, pool_infer, save_pool, ModelPool, PoolEntry,
    PoolManifest, PoolManifestEntry, PoolModel,
};
pub use predictor::{Ddn, EvalBatch, Predictor, Sdn};
pub use sdn::{sdn_forward, train_sdn};
pub use static_net::train_static;

/// Finetune recipe derived from the base recipe: 200 steps at a tenth of the
/// base learning rate, same momentum and batch size, no decay milestones.
pub fn finetune_config(base: &crate::dynnet::TrainConfig) -> crate::dynnet::TrainConfig {
    crate::dynnet::TrainConfig {
        steps: 200,
        lr: base.lr * 0.1,
        lr_milestones: Vec::new(),
        ..base.clone()
    }
}
