use serde::{Deserialize, Serialize};

use super::{Ssmdp, TapKind};
use crate::diffusion::{extraction_input, ExtractionMode};
use crate::error::{ensure, Result};
use crate::latent::{pool_taps, LatentMeta, LatentTensor, PoolKind, PooledBatch};
use crate::signal::SegmentBatch;
use crate::Float;

/// How latent activities are read out of a frozen backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub mode: ExtractionMode,
    pub step: usize,
    pub tap: TapKind,
    pub pools: usize,
    pub pool: PoolKind,
    /// Segments per forward pass.
    pub chunk: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { mode: ExtractionMode::Noiseless, step: 1, tap: TapKind::Gate, pools: 5, pool: PoolKind::Std, chunk: 4 }
    }
}

impl ExtractConfig {
    pub fn meta(&self) -> LatentMeta {
        LatentMeta { tap: self.tap, mode: self.mode, step: self.step }
    }
}

fn forward_taps<F: Float>(model: &Ssmdp<F>, x0: &[F], segments: usize, batch: &SegmentBatch, cfg: &ExtractConfig) -> Result<Vec<Vec<F>>> {
    let (x, t) = extraction_input(x0, cfg.mode, cfg.step, model.schedule())?;
    let rows = segments * batch.channels;
    let steps = vec![t; rows];
    let channels: Vec<usize> = (0..segments).flat_map(|_| batch.channel_ids.iter().copied()).collect();
    Ok(model.forward(&x, batch.samples, &steps, &channels, Some(cfg.tap), false)?.taps)
}

/// Full-resolution activities of segment `index`, `(C, layers, L, H)`.
pub fn extract_latents<F: Float>(model: &Ssmdp<F>, batch: &SegmentBatch, index: usize, cfg: &ExtractConfig) -> Result<LatentTensor<F>> {
    ensure!(index < batch.len(), InvalidArgument, "segment {index} out of range");
    let x0: Vec<F> = batch.segment(index).iter().map(|&v| F::of(v as f64)).collect();
    let taps = forward_taps(model, &x0, 1, batch, cfg)?;
    let (c, l) = (batch.channels, batch.samples);
    let width = c * l;
    let h = taps[0].len() / width;
    let n = taps.len();
    let mut values = vec![F::zero(); c * n * l * h];
    for (ni, tap) in taps.iter().enumerate() {
        for ci in 0..c {
            for t in 0..l {
                for hi in 0..h {
                    values[((ci * n + ni) * l + t) * h + hi] = tap[hi * width + ci * l + t];
                }
            }
        }
    }
    Ok(LatentTensor { values, channels: c, layers: n, len: l, hidden: h, meta: cfg.meta() })
}

/// Pooled tokens for every segment in `batch`.
pub fn extract_pooled<F: Float>(model: &Ssmdp<F>, batch: &SegmentBatch, cfg: &ExtractConfig) -> Result<PooledBatch<F>> {
    ensure!(!batch.is_empty(), InvalidArgument, "nothing to extract");
    ensure!(cfg.chunk > 0, Config, "extraction chunk must be positive");
    let seg_len = batch.channels * batch.samples;
    let mut out: Option<PooledBatch<F>> = None;
    for start in (0..batch.len()).step_by(cfg.chunk) {
        let end = (start + cfg.chunk).min(batch.len());
        let x0: Vec<F> = batch.signals[start * seg_len..end * seg_len].iter().map(|&v| F::of(v as f64)).collect();
        let taps = forward_taps(model, &x0, end - start, batch, cfg)?;
        let pooled = pool_taps(&taps, (end - start) * batch.channels, batch.samples, batch.channels, cfg.pools, cfg.pool)?;
        match out.as_mut() {
            None => out = Some(pooled),
            Some(acc) => {
                acc.values.extend(pooled.values);
                acc.segments += pooled.segments;
            }
        }
    }
    Ok(out.expect("batch is non-empty"))
}
