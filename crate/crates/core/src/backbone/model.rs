use std::f64::consts::FRAC_1_SQRT_2;

use super::{step_embedding, SsmdpConfig, TapKind, TapPoint};
use crate::attention::Linear;
use crate::diffusion::{NoiseSchedule, VelocityModel};
use crate::error::{ensure, Result};
use crate::numerics::rng::Rng;
use crate::ssm::{BankCache, S4dBank};
use crate::{Float, Module, Param, Tensor};

fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn relu_in_place<F: Float>(x: &mut [F]) {
    x.iter_mut().for_each(|v| *v = v.max(F::zero()));
}

fn relu_mask<F: Float>(pre: &[F], grad: &mut [F]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= F::zero() {
            *g = F::zero();
        }
    }
}

/// Gated residual block with a bidirectional SSM bank in place of a
/// dilated convolution.
#[derive(Debug, Clone)]
pub struct GatedBlock<F: Float> {
    pub in_proj: Linear<F>,
    pub ssm: S4dBank<F>,
    pub cond_proj: Linear<F>,
    pub out_proj: Linear<F>,
}

/// Everything one block produces in a forward pass.
pub struct BlockStep<F: Float> {
    /// `(u + o_res) / √2`, shaped `(residual, width)`.
    pub residual: Vec<F>,
    pub skip: Vec<F>,
    /// Bidirectional SSM output, gate rows first.
    pub ssm_out: Vec<F>,
    /// SSM output plus conditioning, gate rows first.
    pub pre: Vec<F>,
    pub z: Vec<F>,
    a: Vec<F>,
    bank: BankCache<F>,
}

impl<F: Float> GatedBlock<F> {
    /// `u` is `(residual, rows·len)`, `cond` is `(embed, rows)`.
    pub fn forward(&self, u: &[F], cond: &[F], rows: usize, len: usize) -> Result<BlockStep<F>> {
        let width = rows * len;
        let h = self.out_proj.in_dim();
        let res = self.out_proj.out_dim() / 2;
        let a = self.in_proj.forward_features(u, width)?;
        let (ssm_out, bank) = self.ssm.forward(&a, rows, len)?;
        let cp = self.cond_proj.forward_features(cond, rows)?;
        let mut pre = ssm_out.clone();
        for c in 0..2 * h {
            for r in 0..rows {
                let bias = cp[c * rows + r];
                pre[c * width + r * len..c * width + (r + 1) * len].iter_mut().for_each(|v| *v += bias);
            }
        }
        let (g, f) = pre.split_at(h * width);
        let z: Vec<F> = g.iter().zip(f).map(|(&g, &f)| f.tanh() * sigmoid(g)).collect();
        let mut o = self.out_proj.forward_features(&z, width)?;
        let scale = F::of(FRAC_1_SQRT_2);
        let skip = o.split_off(res * width);
        let residual = u.iter().zip(&o).map(|(&u, &o)| (u + o) * scale).collect();
        Ok(BlockStep { residual, skip, ssm_out, pre, z, a, bank })
    }
}

impl<F: Float> Module<F> for GatedBlock<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut p = self.in_proj.params();
        p.extend(self.ssm.params());
        p.extend(self.cond_proj.params());
        p.extend(self.out_proj.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut p = self.in_proj.params_mut();
        p.extend(self.ssm.params_mut());
        p.extend(self.cond_proj.params_mut());
        p.extend(self.out_proj.params_mut());
        p
    }
}

struct BlockCache<F: Float> {
    u: Vec<F>,
    a: Vec<F>,
    bank: BankCache<F>,
    pre: Vec<F>,
    z: Vec<F>,
}

/// Intermediate values kept for the backward pass.
pub struct SsmdpCache<F: Float> {
    rows: usize,
    len: usize,
    tap: Option<TapKind>,
    channels: Vec<usize>,
    x: Vec<F>,
    h0_pre: Vec<F>,
    cond: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    skip_pre: Vec<F>,
    head_pre: Vec<F>,
    head: Vec<F>,
}

/// Result of a forward pass.
pub struct SsmdpOutput<F: Float> {
    /// Predicted velocity, one row per input row.
    pub output: Vec<F>,
    /// Per block, the selected tap shaped `(H, rows·len)`.
    pub taps: Vec<Vec<F>>,
    pub cache: Option<SsmdpCache<F>>,
}

/// Diffusion backbone over single-channel rows.
#[derive(Debug, Clone)]
pub struct Ssmdp<F: Float> {
    cfg: SsmdpConfig,
    pub input_proj: Linear<F>,
    pub channel_embed: Param<F>,
    pub blocks: Vec<GatedBlock<F>>,
    pub skip_proj: Linear<F>,
    pub output_proj: Linear<F>,
    schedule: NoiseSchedule,
}

impl<F: Float> Ssmdp<F> {
    pub fn new(cfg: SsmdpConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build(cfg.steps)?;
        let (r, h, e) = (cfg.residual_channels, cfg.gate_channels, cfg.embed_dim);
        let input_proj = Linear::new("input_proj", 1, r, rng);
        let channel_embed = Param::new("channel_embed", Tensor::randn(&[cfg.num_channels, e], 1.0, rng));
        let blocks = (0..cfg.n_layers)
            .map(|i| {
                Ok(GatedBlock {
                    in_proj: Linear::new(&format!("blocks.{i}.in_proj"), r, 2 * h, rng),
                    ssm: S4dBank::init(&format!("blocks.{i}.ssm"), 2 * h, cfg.state_dim, rng)?,
                    cond_proj: Linear::new(&format!("blocks.{i}.cond_proj"), e, 2 * h, rng),
                    out_proj: Linear::new(&format!("blocks.{i}.out_proj"), h, 2 * r, rng),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            input_proj,
            channel_embed,
            blocks,
            skip_proj: Linear::new("skip_proj", r, r, rng),
            output_proj: Linear::new("output_proj", r, 1, rng),
            schedule,
            cfg,
        })
    }

    pub fn config(&self) -> &SsmdpConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn set_tap_point(&mut self, point: TapPoint) {
        self.cfg.tap_point = point;
    }

    /// Rescales every SSM step size for input sampled at `ratio` times the
    /// training rate.
    pub fn retarget_rate(&mut self, ratio: f64) -> Result<()> {
        for b in &mut self.blocks {
            b.ssm.retarget_rate(ratio)?;
        }
        Ok(())
    }

    fn conditioning(&self, steps: &[usize], channels: &[usize]) -> Result<Vec<F>> {
        let (e, m) = (self.cfg.embed_dim, steps.len());
        let mut cond = vec![F::zero(); e * m];
        for (r, (&t, &ch)) in steps.iter().zip(channels).enumerate() {
            ensure!(ch < self.cfg.num_channels, InvalidArgument, "unknown channel id {ch} (table has {})", self.cfg.num_channels);
            ensure!(t <= self.cfg.steps, InvalidArgument, "diffusion step {t} exceeds {}", self.cfg.steps);
            let emb = step_embedding(t, e)?;
            let table = &self.channel_embed.value.data()[ch * e..(ch + 1) * e];
            for k in 0..e {
                cond[k * m + r] = table[k] + F::of(emb[k]);
            }
        }
        Ok(cond)
    }

    /// Runs the network on `steps.len()` rows of `len` samples.
    ///
    /// `tap` selects which path's activations are returned per block;
    /// `keep_cache` retains what `backward` needs.
    pub fn forward(
        &self,
        x: &[F],
        len: usize,
        steps: &[usize],
        channels: &[usize],
        tap: Option<TapKind>,
        keep_cache: bool,
    ) -> Result<SsmdpOutput<F>> {
        let rows = steps.len();
        ensure!(rows > 0 && len > 0, Shape, "empty backbone input");
        ensure!(channels.len() == rows, Shape, "{} channel ids for {rows} rows", channels.len());
        ensure!(x.len() == rows * len, Shape, "backbone input has {} values, expected {rows}×{len}", x.len());
        let (h, width) = (self.cfg.gate_channels, rows * len);
        let res = self.cfg.residual_channels;
        let cond = self.conditioning(steps, channels)?;

        let h0_pre = self.input_proj.forward_features(x, width)?;
        let mut u = h0_pre.clone();
        relu_in_place(&mut u);

        let mut skip = vec![F::zero(); res * width];
        let mut taps = Vec::new();
        let mut caches = Vec::new();
        for block in &self.blocks {
            let step = block.forward(&u, &cond, rows, len)?;
            if let Some(kind) = tap {
                let src = match self.cfg.tap_point {
                    TapPoint::Pre => &step.pre,
                    TapPoint::Ssm => &step.ssm_out,
                };
                taps.push(tap_slice(src, kind, h, width));
            }
            for (s, &o) in skip.iter_mut().zip(&step.skip) {
                *s += o;
            }
            let u_prev = std::mem::replace(&mut u, step.residual);
            if keep_cache {
                caches.push(BlockCache { u: u_prev, a: step.a, bank: step.bank, pre: step.pre, z: step.z });
            }
        }

        let norm = F::of(1.0 / (self.cfg.n_layers as f64).sqrt());
        skip.iter_mut().for_each(|v| *v *= norm);
        let skip_pre = skip;
        let mut hidden = skip_pre.clone();
        relu_in_place(&mut hidden);
        let head_pre = self.skip_proj.forward_features(&hidden, width)?;
        let mut head = head_pre.clone();
        relu_in_place(&mut head);
        let output = self.output_proj.forward_features(&head, width)?;

        let cache = keep_cache.then(|| SsmdpCache {
            rows,
            len,
            tap,
            channels: channels.to_vec(),
            x: x.to_vec(),
            h0_pre,
            cond,
            blocks: caches,
            skip_pre,
            head_pre,
            head,
        });
        Ok(SsmdpOutput { output, taps, cache })
    }

    /// Accumulates parameter gradients from `∂L/∂output` and, optionally,
    /// `∂L/∂tap` for every block.
    pub fn backward(&mut self, cache: &SsmdpCache<F>, dout: &[F], dtaps: Option<&[Vec<F>]>) -> Result<()> {
        let (rows, len) = (cache.rows, cache.len);
        let width = rows * len;
        let (h, res, e) = (self.cfg.gate_channels, self.cfg.residual_channels, self.cfg.embed_dim);
        ensure!(dout.len() == width, Shape, "output gradient has {} values, expected {width}", dout.len());
        ensure!(cache.blocks.len() == self.blocks.len(), InvalidArgument, "forward pass was run without a cache");
        if let Some(d) = dtaps {
            ensure!(d.len() == self.blocks.len(), Shape, "{} tap gradients for {} blocks", d.len(), self.blocks.len());
            ensure!(d.iter().all(|t| t.len() == h * width), Shape, "tap gradients must be {h}×{width}");
        }

        let mut hidden = cache.skip_pre.clone();
        relu_in_place(&mut hidden);
        let mut dhead = self.output_proj.backward_features(&cache.head, width, dout);
        relu_mask(&cache.head_pre, &mut dhead);
        let mut dskip = self.skip_proj.backward_features(&hidden, width, &dhead);
        relu_mask(&cache.skip_pre, &mut dskip);
        let norm = F::of(1.0 / (self.cfg.n_layers as f64).sqrt());
        dskip.iter_mut().for_each(|v| *v *= norm);

        let scale = F::of(FRAC_1_SQRT_2);
        let mut du = vec![F::zero(); res * width];
        let mut dcond = vec![F::zero(); e * rows];
        let tap_off = match cache.tap {
            Some(TapKind::Filter) => h * width,
            _ => 0,
        };
        ensure!(dtaps.is_none() || cache.tap.is_some(), InvalidArgument, "tap gradients given but no tap was recorded");
        for (i, (block, bc)) in self.blocks.iter_mut().zip(&cache.blocks).enumerate().rev() {
            let mut dout_block = Vec::with_capacity(2 * res * width);
            dout_block.extend(du.iter().map(|&g| g * scale));
            dout_block.extend_from_slice(&dskip);
            let dz = block.out_proj.backward_features(&bc.z, width, &dout_block);

            let (g, f) = bc.pre.split_at(h * width);
            let mut dpre = vec![F::zero(); 2 * h * width];
            for k in 0..h * width {
                let (sg, tf) = (sigmoid(g[k]), f[k].tanh());
                dpre[k] = dz[k] * tf * sg * (F::one() - sg);
                dpre[h * width + k] = dz[k] * sg * (F::one() - tf * tf);
            }
            let tap_grad = dtaps.map(|d| &d[i]);
            if let (Some(dt), TapPoint::Pre) = (tap_grad, self.cfg.tap_point) {
                for (d, &t) in dpre[tap_off..tap_off + h * width].iter_mut().zip(dt) {
                    *d += t;
                }
            }

            let mut dcp = vec![F::zero(); 2 * h * rows];
            for c in 0..2 * h {
                for r in 0..rows {
                    dcp[c * rows + r] = dpre[c * width + r * len..c * width + (r + 1) * len].iter().copied().sum();
                }
            }
            let dc = block.cond_proj.backward_features(&cache.cond, rows, &dcp);
            for (a, &b) in dcond.iter_mut().zip(&dc) {
                *a += b;
            }

            let mut ds = dpre;
            if let (Some(dt), TapPoint::Ssm) = (tap_grad, self.cfg.tap_point) {
                for (d, &t) in ds[tap_off..tap_off + h * width].iter_mut().zip(dt) {
                    *d += t;
                }
            }
            let da = block.ssm.backward(&bc.a, rows, len, &bc.bank, &ds)?;
            let du_in = block.in_proj.backward_features(&bc.u, width, &da);
            for (d, &g) in du.iter_mut().zip(&du_in) {
                *d = *d * scale + g;
            }
        }

        relu_mask(&cache.h0_pre, &mut du);
        self.input_proj.backward_features(&cache.x, width, &du);
        for (r, &ch) in cache.channels.iter().enumerate() {
            let grad = &mut self.channel_embed.grad.data_mut()[ch * e..(ch + 1) * e];
            for (k, g) in grad.iter_mut().enumerate() {
                *g += dcond[k * rows + r];
            }
        }
        Ok(())
    }
}

fn tap_slice<F: Float>(src: &[F], kind: TapKind, h: usize, width: usize) -> Vec<F> {
    match kind {
        TapKind::Gate => src[..h * width].to_vec(),
        TapKind::Filter => src[h * width..2 * h * width].to_vec(),
    }
}

impl<F: Float> Module<F> for Ssmdp<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut p = self.input_proj.params();
        p.push(&self.channel_embed);
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.skip_proj.params());
        p.extend(self.output_proj.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut p = self.input_proj.params_mut();
        p.push(&mut self.channel_embed);
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p.extend(self.skip_proj.params_mut());
        p.extend(self.output_proj.params_mut());
        p
    }
}

impl<F: Float> VelocityModel<F> for Ssmdp<F> {
    fn predict(&self, x: &[F], len: usize, steps: &[usize], channels: &[usize]) -> Result<Vec<F>> {
        Ok(self.forward(x, len, steps, channels, None, false)?.output)
    }
}
