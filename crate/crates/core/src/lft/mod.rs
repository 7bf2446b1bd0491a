//! Latent fusion classifier: per-layer cross-attention fusion of pooled
//! latent tokens followed by a transformer encoder.

mod config;
mod model;

pub use config::{FusionKind, LftConfig};
pub use model::{Lft, LftCache};
