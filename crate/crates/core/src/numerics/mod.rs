//! Minimal differentiable tensor core: dense and convolution layers, a
//! recorded forward pass with hand-chained backward, softmax cross-entropy
//! and momentum SGD.

mod init;
pub mod layers;
mod loss;
mod network;
mod optim;
mod param;
mod real;
mod tensor;

pub use init::he_uniform;
pub use layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, ConvGeometry, LayerGrads,
};
pub use loss::{argmax_rows, softmax_cross_entropy};
pub use network::{
    backprop_layers, chain_shapes, forward_layer, run_layers, LayerParams, LayerSpec, Sequential,
    StaticLayer, Tape, WeightGrad, WeightRef,
};
pub use optim::{sgd_step, Sgd};
pub use param::{Activation, Parameter};
pub use real::Real;
pub use tensor::Tensor;
