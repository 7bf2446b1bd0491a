use serde::{Deserialize, Serialize};

use crate::backbone::TapKind;
use crate::diffusion::ExtractionMode;
use crate::error::{ensure, Result};
use crate::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    #[serde(alias = "average")]
    Avg,
    /// Population standard deviation.
    #[default]
    Std,
}

impl std::str::FromStr for PoolKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" | "average" | "mean" => Ok(PoolKind::Avg),
            "std" => Ok(PoolKind::Std),
            other => Err(crate::Error::Config(format!("unknown pool kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatentMeta {
    pub tap: TapKind,
    pub mode: ExtractionMode,
    pub step: usize,
}

/// Activations of one segment, `(channels, layers, len, hidden)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor<F> {
    pub values: Vec<F>,
    pub channels: usize,
    pub layers: usize,
    pub len: usize,
    pub hidden: usize,
    pub meta: LatentMeta,
}

impl<F: Float> LatentTensor<F> {
    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.layers, self.len, self.hidden]
    }

    pub fn at(&self, c: usize, n: usize, l: usize, h: usize) -> F {
        self.values[((c * self.layers + n) * self.len + l) * self.hidden + h]
    }
}

/// Pooled tokens of one segment, `(channels, layers, pools, hidden)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledLatents<F> {
    pub values: Vec<F>,
    pub channels: usize,
    pub layers: usize,
    pub pools: usize,
    pub hidden: usize,
    pub kind: PoolKind,
    pub window: usize,
}

impl<F: Float> PooledLatents<F> {
    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.layers, self.pools, self.hidden]
    }

    pub fn at(&self, c: usize, n: usize, q: usize, h: usize) -> F {
        self.values[((c * self.layers + n) * self.pools + q) * self.hidden + h]
    }

    /// Keeps only the listed layers, in the given order.
    pub fn layer_subset(&self, subset: &[usize]) -> Result<Self> {
        ensure!(!subset.is_empty(), InvalidArgument, "layer subset is empty");
        ensure!(
            subset.iter().all(|&i| i < self.layers),
            InvalidArgument,
            "layer subset {subset:?} outside [0, {})",
            self.layers
        );
        let block = self.pools * self.hidden;
        let mut values = Vec::with_capacity(self.channels * subset.len() * block);
        for c in 0..self.channels {
            for &n in subset {
                let off = (c * self.layers + n) * block;
                values.extend_from_slice(&self.values[off..off + block]);
            }
        }
        Ok(Self { values, layers: subset.len(), ..self.clone() })
    }
}

/// Window summary accumulated in sorted order, so the result depends only
/// on the multiset of values.
fn window_stat<F: Float>(xs: impl Iterator<Item = F>, buf: &mut Vec<f64>, kind: PoolKind) -> F {
    buf.clear();
    buf.extend(xs.map(|v| v.f64()));
    buf.sort_unstable_by(f64::total_cmp);
    let w = buf.len() as f64;
    let mean = buf.iter().sum::<f64>() / w;
    match kind {
        PoolKind::Avg => F::of(mean),
        PoolKind::Std => {
            let var = buf.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w;
            F::of(var.sqrt())
        }
    }
}

/// Splits the time axis into `pools` equal windows and summarises each.
pub fn pool<F: Float>(latents: &LatentTensor<F>, pools: usize, kind: PoolKind) -> Result<PooledLatents<F>> {
    let [c, n, l, h] = latents.shape();
    ensure!(pools >= 1 && l % pools == 0, InvalidArgument, "length {l} is not divisible into {pools} pools");
    let window = l / pools;
    let mut values = Vec::with_capacity(c * n * pools * h);
    let mut buf = Vec::with_capacity(window);
    for ci in 0..c {
        for ni in 0..n {
            for q in 0..pools {
                for hi in 0..h {
                    let it = (q * window..(q + 1) * window).map(|t| latents.at(ci, ni, t, hi));
                    values.push(window_stat(it, &mut buf, kind));
                }
            }
        }
    }
    Ok(PooledLatents { values, channels: c, layers: n, pools, hidden: h, kind, window })
}

/// Pooled tokens for a batch of segments, `(segments, channels, layers,
/// pools, hidden)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledBatch<F> {
    pub values: Vec<F>,
    pub segments: usize,
    pub channels: usize,
    pub layers: usize,
    pub pools: usize,
    pub hidden: usize,
    pub kind: PoolKind,
}

impl<F: Float> PooledBatch<F> {
    pub fn sample_len(&self) -> usize {
        self.channels * self.layers * self.pools * self.hidden
    }

    pub fn sample(&self, i: usize) -> &[F] {
        let n = self.sample_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize) -> PooledLatents<F> {
        PooledLatents {
            values: self.sample(i).to_vec(),
            channels: self.channels,
            layers: self.layers,
            pools: self.pools,
            hidden: self.hidden,
            kind: self.kind,
            window: 0,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            values.extend_from_slice(self.sample(i));
        }
        Self { values, segments: indices.len(), ..self.clone() }
    }

    pub fn layer_subset(&self, subset: &[usize]) -> Result<Self> {
        let mut values = Vec::new();
        for i in 0..self.segments {
            values.extend(self.get(i).layer_subset(subset)?.values);
        }
        Ok(Self { values, layers: subset.len(), ..self.clone() })
    }

    pub fn cast<G: Float>(&self) -> PooledBatch<G> {
        PooledBatch {
            values: self.values.iter().map(|v| G::of(v.f64())).collect(),
            segments: self.segments,
            channels: self.channels,
            layers: self.layers,
            pools: self.pools,
            hidden: self.hidden,
            kind: self.kind,
        }
    }
}

/// Pools feature-major backbone taps.
///
/// `taps[n]` is `(hidden, rows·len)` where row `r = segment·channels + c`.
pub fn pool_taps<F: Float>(
    taps: &[Vec<F>],
    rows: usize,
    len: usize,
    channels: usize,
    pools: usize,
    kind: PoolKind,
) -> Result<PooledBatch<F>> {
    ensure!(!taps.is_empty(), InvalidArgument, "no taps to pool");
    ensure!(channels >= 1 && rows % channels == 0, Shape, "{rows} rows do not split into {channels} channels");
    ensure!(pools >= 1 && len % pools == 0, InvalidArgument, "length {len} is not divisible into {pools} pools");
    let width = rows * len;
    ensure!(taps[0].len() % width == 0, Shape, "tap size is not a multiple of {width}");
    let hidden = taps[0].len() / width;
    let (layers, window, segments) = (taps.len(), len / pools, rows / channels);
    let mut values = vec![F::zero(); segments * channels * layers * pools * hidden];
    let mut buf = Vec::with_capacity(window);
    for (n, tap) in taps.iter().enumerate() {
        ensure!(tap.len() == hidden * width, Shape, "taps differ in size");
        for r in 0..rows {
            let (s, c) = (r / channels, r % channels);
            for hi in 0..hidden {
                let row = &tap[hi * width + r * len..hi * width + (r + 1) * len];
                for q in 0..pools {
                    let w = &row[q * window..(q + 1) * window];
                    let idx = ((((s * channels + c) * layers + n) * pools) + q) * hidden + hi;
                    values[idx] = window_stat(w.iter().copied(), &mut buf, kind);
                }
            }
        }
    }
    Ok(PooledBatch { values, segments, channels, layers, pools, hidden, kind })
}

/// Gradient of [`pool_taps`]: maps `∂L/∂pooled` back to each tap.
pub fn pool_taps_backward<F: Float>(taps: &[Vec<F>], rows: usize, len: usize, pooled: &PooledBatch<F>, dpooled: &[F]) -> Result<Vec<Vec<F>>> {
    ensure!(dpooled.len() == pooled.values.len(), Shape, "pooled gradient size mismatch");
    let (channels, layers, pools, hidden) = (pooled.channels, pooled.layers, pooled.pools, pooled.hidden);
    let (width, window) = (rows * len, len / pools);
    let mut out = Vec::with_capacity(layers);
    for (n, tap) in taps.iter().enumerate() {
        let mut d = vec![F::zero(); tap.len()];
        for r in 0..rows {
            let (s, c) = (r / channels, r % channels);
            for hi in 0..hidden {
                for q in 0..pools {
                    let idx = ((((s * channels + c) * layers + n) * pools) + q) * hidden + hi;
                    let g = dpooled[idx];
                    let off = hi * width + r * len + q * window;
                    let w = &tap[off..off + window];
                    match pooled.kind {
                        PoolKind::Avg => {
                            let gw = g / F::of(window as f64);
                            d[off..off + window].iter_mut().for_each(|v| *v += gw);
                        }
                        PoolKind::Std => {
                            let sd = pooled.values[idx];
                            if sd > F::zero() {
                                let mean = w.iter().copied().sum::<F>() / F::of(window as f64);
                                let k = g / (F::of(window as f64) * sd);
                                for (dv, &x) in d[off..off + window].iter_mut().zip(w) {
                                    *dv += k * (x - mean);
                                }
                            }
                        }
                    }
                }
            }
        }
        out.push(d);
    }
    Ok(out)
}

/// Per-(layer, hidden) standardisation fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentNormalizer {
    pub layers: usize,
    pub hidden: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentNormalizer {
    pub fn identity(layers: usize, hidden: usize) -> Self {
        Self { layers, hidden, mean: vec![0.0; layers * hidden], std: vec![1.0; layers * hidden] }
    }

    pub fn fit<F: Float>(batch: &PooledBatch<F>) -> Result<Self> {
        ensure!(batch.segments > 0, InvalidArgument, "cannot fit a normaliser on an empty batch");
        let (n, h) = (batch.layers, batch.hidden);
        let mut sum = vec![0.0; n * h];
        let mut sq = vec![0.0; n * h];
        let mut count = 0.0;
        for s in 0..batch.segments {
            for c in 0..batch.channels {
                for li in 0..n {
                    for q in 0..batch.pools {
                        let off = (((s * batch.channels + c) * n + li) * batch.pools + q) * h;
                        for hi in 0..h {
                            let v = batch.values[off + hi].f64();
                            sum[li * h + hi] += v;
                            sq[li * h + hi] += v * v;
                        }
                    }
                }
                count += batch.pools as f64;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / count - m * m).max(0.0).sqrt()).max(1e-6))
            .collect();
        Ok(Self { layers: n, hidden: h, mean, std })
    }

    /// Restricts to the listed layers.
    pub fn layer_subset(&self, subset: &[usize]) -> Self {
        let pick = |v: &[f64]| subset.iter().flat_map(|&i| v[i * self.hidden..(i + 1) * self.hidden].to_vec()).collect();
        Self { layers: subset.len(), hidden: self.hidden, mean: pick(&self.mean), std: pick(&self.std) }
    }

    pub fn apply<F: Float>(&self, batch: &mut PooledBatch<F>) -> Result<()> {
        ensure!(
            batch.layers == self.layers && batch.hidden == self.hidden,
            Shape,
            "normaliser fitted for ({}, {}) but batch has ({}, {})",
            self.layers,
            self.hidden,
            batch.layers,
            batch.hidden
        );
        let (n, h, p) = (self.layers, self.hidden, batch.pools);
        for (i, v) in batch.values.iter_mut().enumerate() {
            let hi = i % h;
            let li = (i / (h * p)) % n;
            let k = li * h + hi;
            *v = F::of((v.f64() - self.mean[k]) / self.std[k]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(len: usize, values: Vec<f64>) -> LatentTensor<f64> {
        LatentTensor { values, channels: 1, layers: 1, len, hidden: 1, meta: LatentMeta::default() }
    }

    #[test]
    fn hand_values() {
        let t = tensor(4, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pool(&t, 1, PoolKind::Avg).unwrap().values, vec![2.5]);
        let t = tensor(4, vec![1.0, -1.0, 1.0, -1.0]);
        assert!((pool(&t, 1, PoolKind::Std).unwrap().values[0] - 1.0).abs() < 1e-15);
        let t = tensor(4, vec![3.0; 4]);
        assert_eq!(pool(&t, 2, PoolKind::Std).unwrap().values, vec![0.0, 0.0]);
        assert!(pool(&t, 3, PoolKind::Std).is_err());
    }

    #[test]
    fn window_of_one() {
        let vals: Vec<f64> = (0..6).map(|v| v as f64 * 0.7 - 1.0).collect();
        let t = tensor(6, vals.clone());
        assert_eq!(pool(&t, 6, PoolKind::Avg).unwrap().values, vals);
        assert!(pool(&t, 6, PoolKind::Std).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tap_pooling_matches_tensor_pooling() {
        // Two segments, two channels, two layers, length 6, hidden 3.
        let (segs, ch, layers, len, hid) = (2, 2, 2, 6, 3);
        let rows = segs * ch;
        let taps: Vec<Vec<f64>> =
            (0..layers).map(|n| (0..hid * rows * len).map(|i| ((i * 7 + n * 13) as f64).sin()).collect()).collect();
        let pb = pool_taps(&taps, rows, len, ch, 3, PoolKind::Std).unwrap();
        for s in 0..segs {
            let mut values = Vec::new();
            for c in 0..ch {
                for tap in &taps {
                    for l in 0..len {
                        for h in 0..hid {
                            values.push(tap[h * rows * len + (s * ch + c) * len + l]);
                        }
                    }
                }
            }
            let t = LatentTensor { values, channels: ch, layers, len, hidden: hid, meta: LatentMeta::default() };
            assert_eq!(pool(&t, 3, PoolKind::Std).unwrap().values, pb.sample(s));
        }
    }

    #[test]
    fn tap_pooling_gradient() {
        let (rows, len) = (2, 8);
        let taps: Vec<Vec<f64>> = (0..2).map(|n| (0..2 * rows * len).map(|i| ((i * 3 + n) as f64 * 0.71).cos()).collect()).collect();
        for kind in [PoolKind::Avg, PoolKind::Std] {
            let pb = pool_taps(&taps, rows, len, 2, 2, kind).unwrap();
            let w: Vec<f64> = (0..pb.values.len()).map(|i| (i as f64 * 0.37).sin()).collect();
            let d = pool_taps_backward(&taps, rows, len, &pb, &w).unwrap();
            let f = |t: &[Vec<f64>]| -> f64 { pool_taps(t, rows, len, 2, 2, kind).unwrap().values.iter().zip(&w).map(|(a, b)| a * b).sum() };
            for n in 0..2 {
                for i in 0..taps[n].len() {
                    let (mut p, mut m) = (taps.clone(), taps.clone());
                    p[n][i] += 1e-6;
                    m[n][i] -= 1e-6;
                    let num = (f(&p) - f(&m)) / 2e-6;
                    assert!((num - d[n][i]).abs() < 1e-6, "{kind:?} {num} {}", d[n][i]);
                }
            }
        }
    }

    #[test]
    fn normaliser_standardises_training_batch() {
        let values: Vec<f64> = (0..3 * 2 * 2 * 2 * 4).map(|i| (i as f64 * 1.3).sin() * 5.0 + 2.0).collect();
        let mut b = PooledBatch { values, segments: 3, channels: 2, layers: 2, pools: 2, hidden: 4, kind: PoolKind::Std };
        let norm = LatentNormalizer::fit(&b).unwrap();
        norm.apply(&mut b).unwrap();
        let again = LatentNormalizer::fit(&b).unwrap();
        assert!(again.mean.iter().all(|m| m.abs() < 1e-9));
        assert!(again.std.iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn subset_restricts_layers() {
        let t = LatentTensor {
            values: (0..2 * 4 * 2).map(|v| v as f64).collect(),
            channels: 1,
            layers: 4,
            len: 2,
            hidden: 2,
            meta: LatentMeta::default(),
        };
        let p = pool(&t, 1, PoolKind::Avg).unwrap();
        assert_eq!(p.layer_subset(&[0, 1, 2, 3]).unwrap(), p);
        let s = p.layer_subset(&[2, 3]).unwrap();
        assert_eq!(s.layers, 2);
        assert_eq!(s.values, p.values[4..].to_vec());
        assert!(p.layer_subset(&[]).is_err());
        assert!(p.layer_subset(&[4]).is_err());
    }

    proptest! {
        #[test]
        fn invariances(xs in prop::collection::vec(-5.0f64..5.0, 8), k in -3.0f64..3.0, seed in any::<u64>()) {
            let t = tensor(8, xs.clone());
            let mut perm = xs.clone();
            // Shuffle within each of the two windows.
            let mut rng = crate::numerics::rng::seeded(seed);
            use rand::seq::SliceRandom;
            perm[..4].shuffle(&mut rng);
            perm[4..].shuffle(&mut rng);
            let tp = tensor(8, perm);
            for kind in [PoolKind::Avg, PoolKind::Std] {
                let (a, b) = (pool(&t, 2, kind).unwrap().values, pool(&tp, 2, kind).unwrap().values);
                prop_assert_eq!(a, b);
            }
            let s = pool(&t, 2, PoolKind::Std).unwrap().values;
            prop_assert!(s.iter().all(|&v| v >= 0.0));
            let scaled = tensor(8, xs.iter().map(|v| v * k).collect());
            let a = pool(&t, 2, PoolKind::Avg).unwrap().values;
            let sa = pool(&scaled, 2, PoolKind::Avg).unwrap().values;
            let ss = pool(&scaled, 2, PoolKind::Std).unwrap().values;
            for i in 0..2 {
                prop_assert!((sa[i] - k * a[i]).abs() < 1e-9);
                prop_assert!((ss[i] - k.abs() * s[i]).abs() < 1e-9);
            }
        }
    }
}
