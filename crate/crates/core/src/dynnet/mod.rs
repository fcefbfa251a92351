//! Expert layers, controllers, weight folding and training through the fold.

mod checkpoint;
mod controller;
mod expert;
mod network;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Conditioning};
pub use controller::{controller_alpha, embedding_fingerprint, sigmoid, ControllerParams};
pub use expert::{fold_layer, ExpertLayer};
pub use network::{
    export_factor_vector, fold_network, forward_dynamic, DynLayer, DynamicNetwork, FoldedNetwork, Provenance,
};
pub use train::{train_ddn, TrainConfig, TrainHistory};
pub(crate) use train::{apply_weight_decay, sample_batch};
