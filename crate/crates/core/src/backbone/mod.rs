//! Gated residual denoiser built from bidirectional diagonal SSMs.

mod config;
mod embed;
mod extract;
mod model;

pub use config::{SsmdpConfig, TapKind, TapPoint};
pub use embed::step_embedding;
pub use extract::{extract_latents, extract_pooled, ExtractConfig};
pub use model::{BlockStep, GatedBlock, Ssmdp, SsmdpCache, SsmdpOutput};
