//! Temporal pooling of latent activities into tokens.

mod cache;
mod pool;

pub use cache::{CacheMeta, LatentCache};
pub use pool::{
    pool, pool_taps, pool_taps_backward, LatentMeta, LatentNormalizer, LatentTensor, PoolKind, PooledBatch,
    PooledLatents,
};
