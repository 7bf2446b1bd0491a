use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// How pooled latent tokens are turned into the encoder sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Trainable query tokens cross-attend to each layer in turn.
    #[default]
    Latent,
    /// All `(C, n, p)` tokens go straight to the encoder.
    None,
    /// Tokens are averaged over the layer axis first.
    Mean,
}

impl std::str::FromStr for FusionKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" => Ok(FusionKind::Latent),
            "none" => Ok(FusionKind::None),
            "mean" => Ok(FusionKind::Mean),
            other => Err(crate::Error::Config(format!("unknown fusion kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LftConfig {
    /// Width of the incoming latent tokens.
    pub latent_dim: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub fusion_tokens: usize,
    /// Must equal the number of latent layer groups.
    pub fusion_blocks: usize,
    pub encoder_blocks: usize,
    pub channels: usize,
    pub pools: usize,
    pub num_classes: usize,
    pub fusion: FusionKind,
    pub dropout: f64,
}

impl Default for LftConfig {
    fn default() -> Self {
        Self::paper(6)
    }
}

impl LftConfig {
    pub fn paper(num_classes: usize) -> Self {
        Self {
            latent_dim: 128,
            dim: 128,
            heads: 8,
            mlp_hidden: 512,
            fusion_tokens: 16,
            fusion_blocks: 20,
            encoder_blocks: 8,
            channels: 22,
            pools: 5,
            num_classes,
            fusion: FusionKind::Latent,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.latent_dim > 0 && self.dim > 0 && self.mlp_hidden > 0 && self.channels > 0 && self.pools > 0,
            Config,
            "classifier dimensions must be positive"
        );
        ensure!(self.heads > 0 && self.dim % self.heads == 0, Config, "dim {} is not divisible by {} heads", self.dim, self.heads);
        ensure!(self.fusion_blocks > 0, Config, "at least one latent layer group is required");
        ensure!(self.num_classes >= 2, Config, "at least two classes are required");
        ensure!((0.0..1.0).contains(&self.dropout), Config, "dropout must lie in [0, 1)");
        if self.fusion == FusionKind::Latent {
            ensure!(self.fusion_tokens > 0, Config, "fusion needs at least one token");
        }
        Ok(())
    }

    /// Encoder sequence length.
    pub fn seq_len(&self) -> usize {
        match self.fusion {
            FusionKind::Latent => self.pools * self.fusion_tokens,
            FusionKind::None => self.channels * self.fusion_blocks * self.pools,
            FusionKind::Mean => self.channels * self.pools,
        }
    }

    /// Whether latent tokens pass through a width-changing projection.
    pub fn has_input_proj(&self) -> bool {
        self.fusion != FusionKind::Latent && self.latent_dim != self.dim
    }

    pub fn param_count(&self) -> usize {
        let (d, m, hid) = (self.dim, self.latent_dim, self.mlp_hidden);
        let linear = |i: usize, o: usize| i * o + o;
        let norm = 2 * d;
        let mlp = linear(d, hid) + linear(hid, d);
        let self_attn = 4 * linear(d, d);
        let cross_attn = 2 * linear(d, d) + 2 * linear(m, d);
        let encoder = 2 * norm + self_attn + mlp;
        let mut total = self.encoder_blocks * encoder + self.seq_len() * d + norm + linear(d, self.num_classes);
        if self.fusion == FusionKind::Latent {
            total += self.fusion_tokens * d + self.fusion_blocks * (3 * norm + self_attn + cross_attn + mlp);
        }
        if self.has_input_proj() {
            total += linear(m, d);
        }
        total
    }

    /// Copy whose encoder depth brings the parameter count closest to
    /// `target`, preferring the deeper option on ties.
    pub fn with_matched_depth(&self, target: usize) -> Self {
        let at = |depth: usize| Self { encoder_blocks: depth, ..self.clone() };
        let per_block = at(1).param_count() - at(0).param_count();
        let base = at(0).param_count();
        let approx = target.saturating_sub(base) / per_block;
        let mut best = at(approx);
        for depth in [approx + 1, approx.saturating_sub(1)] {
            let cand = at(depth);
            let (dc, db) = (cand.param_count().abs_diff(target), best.param_count().abs_diff(target));
            if dc < db || (dc == db && depth > best.encoder_blocks) {
                best = cand;
            }
        }
        best
    }

    /// Configuration for a restricted set of `layers` latent groups with the
    /// encoder deepened to keep the total size of `self`.
    pub fn for_layer_count(&self, layers: usize) -> Self {
        let target = self.param_count();
        Self { fusion_blocks: layers, ..self.clone() }.with_matched_depth(target)
    }

    /// Configuration for an ablated fusion strategy, size-matched to `self`.
    pub fn for_fusion(&self, fusion: FusionKind) -> Self {
        let target = self.param_count();
        let cfg = Self { fusion, ..self.clone() };
        if fusion == self.fusion {
            cfg
        } else {
            cfg.with_matched_depth(target)
        }
    }
}
