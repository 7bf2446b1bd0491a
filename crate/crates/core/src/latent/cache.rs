use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LatentMeta, PoolKind, PooledBatch};
use crate::error::{ensure, Error, Result};

const VALUES_FILE: &str = "latents.f32";
const META_FILE: &str = "latents.json";

/// Sidecar describing a cached pooled-latent array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    /// Identifies the backbone weights and extraction settings.
    pub fingerprint: String,
    pub segments: usize,
    pub channels: usize,
    pub layers: usize,
    pub pools: usize,
    pub hidden: usize,
    pub pool: PoolKind,
    pub latent: LatentMeta,
    pub labels: Vec<usize>,
}

/// Pooled latents of one split plus labels, stored as little-endian `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCache {
    pub meta: CacheMeta,
    pub batch: PooledBatch<f32>,
}

impl LatentCache {
    pub fn new(fingerprint: String, batch: PooledBatch<f32>, latent: LatentMeta, labels: Vec<usize>) -> Result<Self> {
        ensure!(labels.len() == batch.segments, Shape, "{} labels for {} segments", labels.len(), batch.segments);
        let meta = CacheMeta {
            fingerprint,
            segments: batch.segments,
            channels: batch.channels,
            layers: batch.layers,
            pools: batch.pools,
            hidden: batch.hidden,
            pool: batch.kind,
            latent,
            labels,
        };
        Ok(Self { meta, batch })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let bytes: Vec<u8> = self.batch.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(VALUES_FILE), bytes)?;
        fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: CacheMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)?;
        let bytes = fs::read(dir.join(VALUES_FILE))?;
        let expected = meta.segments * meta.channels * meta.layers * meta.pools * meta.hidden;
        if bytes.len() != expected * 4 {
            return Err(Error::Format(format!("latent cache holds {} bytes, expected {}", bytes.len(), expected * 4)));
        }
        let values = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let batch = PooledBatch {
            values,
            segments: meta.segments,
            channels: meta.channels,
            layers: meta.layers,
            pools: meta.pools,
            hidden: meta.hidden,
            kind: meta.pool,
        };
        Ok(Self { meta, batch })
    }

    /// Loads the cache in `dir` if it exists and matches `fingerprint`.
    pub fn load_matching(dir: &Path, fingerprint: &str) -> Result<Option<Self>> {
        if !dir.join(META_FILE).exists() {
            return Ok(None);
        }
        let cache = Self::load(dir)?;
        Ok((cache.meta.fingerprint == fingerprint).then_some(cache))
    }
}
