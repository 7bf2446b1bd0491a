use super::{FusionKind, LftConfig};
use crate::attention::{softmax_rows, DecoderBlock, DecoderCache, Dropout, EncoderBlock, EncoderCache, LayerNorm, Linear, NormCache};
use crate::error::{ensure, Result};
use crate::numerics::rng::Rng;
use crate::{Float, Module, Param, Tensor};

#[derive(Debug, Clone)]
pub struct Lft<F: Float> {
    cfg: LftConfig,
    /// `(N, dim)` initial queries, copied afresh for every pool.
    pub fusion_tokens: Param<F>,
    pub fusion: Vec<DecoderBlock<F>>,
    pub input_proj: Option<Linear<F>>,
    pub pos_embed: Param<F>,
    pub encoder: Vec<EncoderBlock<F>>,
    pub norm: LayerNorm<F>,
    pub head: Linear<F>,
}

pub struct LftCache<F> {
    fused: Vec<Vec<DecoderCache<F>>>,
    tokens_in: Vec<F>,
    encoder: Vec<EncoderCache<F>>,
    norm: NormCache<F>,
    summary: Vec<F>,
}

impl<F: Float> Lft<F> {
    pub fn new(cfg: LftConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, h) = (cfg.dim, cfg.heads);
        let latent = cfg.fusion == FusionKind::Latent;
        let fusion = if latent {
            (0..cfg.fusion_blocks)
                .map(|i| DecoderBlock::new(&format!("fusion.{i}"), d, cfg.latent_dim, h, cfg.mlp_hidden, rng))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let n_tok = if latent { cfg.fusion_tokens } else { 0 };
        Ok(Self {
            fusion_tokens: Param::no_decay("fusion_tokens", Tensor::trunc_normal(&[n_tok, d], 0.02, rng)),
            fusion,
            input_proj: cfg.has_input_proj().then(|| Linear::new("input_proj", cfg.latent_dim, d, rng)),
            pos_embed: Param::new("pos_embed", Tensor::trunc_normal(&[cfg.seq_len(), d], 0.02, rng)),
            encoder: (0..cfg.encoder_blocks)
                .map(|i| EncoderBlock::new(&format!("encoder.{i}"), d, h, cfg.mlp_hidden, rng))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new("norm", d),
            head: Linear::new("head", d, cfg.num_classes, rng),
            cfg,
        })
    }

    pub fn config(&self) -> &LftConfig {
        &self.cfg
    }

    /// Number of values in one `(C, n, p, H)` input sample.
    pub fn sample_len(&self) -> usize {
        let c = &self.cfg;
        c.channels * c.fusion_blocks * c.pools * c.latent_dim
    }

    fn group(&self, sample: &[F], layer: usize, pool: usize) -> Vec<F> {
        let c = &self.cfg;
        let h = c.latent_dim;
        let mut out = Vec::with_capacity(c.channels * h);
        for ch in 0..c.channels {
            let off = ((ch * c.fusion_blocks + layer) * c.pools + pool) * h;
            out.extend_from_slice(&sample[off..off + h]);
        }
        out
    }

    /// Condenses the `(C, H)` groups of one pool, one per layer, into
    /// `(N, dim)` fusion tokens.
    pub fn fuse_pool(&self, groups: &[Vec<F>], drop: Option<&mut Dropout>) -> Result<Vec<F>> {
        Ok(self.fuse_pool_cached(groups, drop)?.0)
    }

    fn fuse_pool_cached(&self, groups: &[Vec<F>], mut drop: Option<&mut Dropout>) -> Result<(Vec<F>, Vec<DecoderCache<F>>)> {
        ensure!(groups.len() == self.fusion.len(), Shape, "{} layer groups for {} fusion blocks", groups.len(), self.fusion.len());
        let n = self.cfg.fusion_tokens;
        let mut x = self.fusion_tokens.value.data().to_vec();
        let mut caches = Vec::with_capacity(groups.len());
        for (block, mem) in self.fusion.iter().zip(groups) {
            ensure!(mem.len() % self.cfg.latent_dim == 0, Shape, "latent group width mismatch");
            let (y, c) = block.forward(&x, n, mem, mem.len() / self.cfg.latent_dim, drop.as_deref_mut())?;
            x = y;
            caches.push(c);
        }
        Ok((x, caches))
    }

    /// Logits for one `(C, n, p, H)` sample.
    pub fn forward(&self, sample: &[F], mut drop: Option<&mut Dropout>) -> Result<(Vec<F>, LftCache<F>)> {
        let c = &self.cfg;
        ensure!(sample.len() == self.sample_len(), Shape, "classifier input has {} values, expected {}", sample.len(), self.sample_len());
        let (d, s) = (c.dim, c.seq_len());
        let mut fused = Vec::new();
        let tokens_in = match c.fusion {
            FusionKind::Latent => {
                let mut seq = Vec::with_capacity(s * d);
                for q in 0..c.pools {
                    let groups: Vec<Vec<F>> = (0..c.fusion_blocks).map(|i| self.group(sample, i, q)).collect();
                    let (x, caches) = self.fuse_pool_cached(&groups, drop.as_deref_mut())?;
                    seq.extend(x);
                    fused.push(caches);
                }
                seq
            }
            FusionKind::None => sample.to_vec(),
            FusionKind::Mean => {
                let (n, h) = (c.fusion_blocks, c.latent_dim);
                let mut out = vec![F::zero(); c.channels * c.pools * h];
                let inv = F::of(1.0 / n as f64);
                for ch in 0..c.channels {
                    for i in 0..n {
                        for q in 0..c.pools {
                            let src = &sample[((ch * n + i) * c.pools + q) * h..][..h];
                            let dst = &mut out[(ch * c.pools + q) * h..][..h];
                            dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b * inv);
                        }
                    }
                }
                out
            }
        };
        let mut x = match &self.input_proj {
            Some(p) => p.forward_tokens(&tokens_in, s)?,
            None => tokens_in.clone(),
        };
        x.iter_mut().zip(self.pos_embed.value.data()).for_each(|(a, &b)| *a += b);
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            let (y, cache) = block.forward(&x, s, drop.as_deref_mut())?;
            x = y;
            encoder.push(cache);
        }
        let (normed, norm) = self.norm.forward(&x)?;
        let mut summary = vec![F::zero(); d];
        let inv = F::of(1.0 / s as f64);
        for row in normed.chunks_exact(d) {
            summary.iter_mut().zip(row).for_each(|(a, &b)| *a += b * inv);
        }
        let logits = self.head.forward_tokens(&summary, 1)?;
        Ok((logits, LftCache { fused, tokens_in, encoder, norm, summary }))
    }

    pub fn predict_proba(&self, sample: &[F]) -> Result<Vec<F>> {
        let mut p = self.forward(sample, None)?.0;
        softmax_rows(&mut p, self.cfg.num_classes);
        Ok(p)
    }

    /// Accumulates parameter gradients and returns `∂L/∂sample`.
    pub fn backward(&mut self, cache: &LftCache<F>, dlogits: &[F]) -> Result<Vec<F>> {
        let c = self.cfg.clone();
        let (d, s) = (c.dim, c.seq_len());
        ensure!(dlogits.len() == c.num_classes, Shape, "logit gradient has {} values", dlogits.len());
        let dsum = self.head.backward_tokens(&cache.summary, 1, dlogits);
        let inv = F::of(1.0 / s as f64);
        let dnormed: Vec<F> = (0..s * d).map(|i| dsum[i % d] * inv).collect();
        let mut dx = self.norm.backward(&cache.norm, &dnormed);
        for (block, bc) in self.encoder.iter_mut().zip(&cache.encoder).rev() {
            dx = block.backward(bc, &dx);
        }
        self.pos_embed.grad.data_mut().iter_mut().zip(&dx).for_each(|(a, &b)| *a += b);
        let dtokens = match self.input_proj.as_mut() {
            Some(p) => p.backward_tokens(&cache.tokens_in, s, &dx),
            None => dx,
        };

        let (n, h) = (c.fusion_blocks, c.latent_dim);
        let mut dsample = vec![F::zero(); self.sample_len()];
        match c.fusion {
            FusionKind::Latent => {
                let nt = c.fusion_tokens;
                for q in 0..c.pools {
                    let mut g = dtokens[q * nt * d..(q + 1) * nt * d].to_vec();
                    for (i, (block, bc)) in self.fusion.iter_mut().zip(&cache.fused[q]).enumerate().rev() {
                        let (gx, gmem) = block.backward(bc, &g);
                        g = gx;
                        for ch in 0..c.channels {
                            let off = ((ch * n + i) * c.pools + q) * h;
                            dsample[off..off + h].iter_mut().zip(&gmem[ch * h..(ch + 1) * h]).for_each(|(a, &b)| *a += b);
                        }
                    }
                    self.fusion_tokens.grad.data_mut().iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
                }
            }
            FusionKind::None => dsample = dtokens,
            FusionKind::Mean => {
                let inv = F::of(1.0 / n as f64);
                for ch in 0..c.channels {
                    for i in 0..n {
                        for q in 0..c.pools {
                            let src = &dtokens[(ch * c.pools + q) * h..][..h];
                            let dst = &mut dsample[((ch * n + i) * c.pools + q) * h..][..h];
                            dst.iter_mut().zip(src).for_each(|(a, &b)| *a = b * inv);
                        }
                    }
                }
            }
        }
        Ok(dsample)
    }
}

impl<F: Float> Module<F> for Lft<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut p = vec![&self.fusion_tokens];
        for b in &self.fusion {
            p.extend(b.params());
        }
        if let Some(l) = &self.input_proj {
            p.extend(l.params());
        }
        p.push(&self.pos_embed);
        for b in &self.encoder {
            p.extend(b.params());
        }
        p.extend(self.norm.params());
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut p = vec![&mut self.fusion_tokens];
        for b in &mut self.fusion {
            p.extend(b.params_mut());
        }
        if let Some(l) = &mut self.input_proj {
            p.extend(l.params_mut());
        }
        p.push(&mut self.pos_embed);
        for b in &mut self.encoder {
            p.extend(b.params_mut());
        }
        p.extend(self.norm.params_mut());
        p.extend(self.head.params_mut());
        p
    }
}
