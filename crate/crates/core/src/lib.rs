//! Domain-aware dynamic networks.
//!
//! Layers hold several expert weight tensors; a per-expert sigmoid controller
//! maps a domain embedding to combination factors, and the weighted sum is
//! folded into an ordinary static network that is reused for as long as the
//! input domain stays the same.

pub mod baselines;
pub mod domains;
pub mod dynnet;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod numerics;
pub mod seed;

pub use error::{Error, Result};
