//! Run configuration: presets, JSON files with dotted keys, and overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use eegdm::backbone::{ExtractConfig, SsmdpConfig};
use eegdm::lft::{FusionKind, LftConfig};
use eegdm::signal::{PreprocessConfig, SynthSpec};
use eegdm::training::{FinetuneConfig, LrSchedule, OptimConfig, PretrainConfig};
use eegdm::{Error, Result};

/// Which backbone layers feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayerSelection {
    #[default]
    All,
    FirstHalf,
    SecondHalf,
    /// One of the four quarters, 1-based.
    Quarter(usize),
}

impl LayerSelection {
    pub fn indices(self, layers: usize) -> Result<Vec<usize>> {
        let range = match self {
            LayerSelection::All => 0..layers,
            LayerSelection::FirstHalf => 0..layers / 2,
            LayerSelection::SecondHalf => layers / 2..layers,
            LayerSelection::Quarter(q) => {
                if layers % 4 != 0 {
                    return Err(Error::Config(format!("quarters need a layer count divisible by 4, got {layers}")));
                }
                (q - 1) * layers / 4..q * layers / 4
            }
        };
        if range.is_empty() {
            return Err(Error::Config(format!("layer selection {self} is empty for {layers} layers")));
        }
        Ok(range.collect())
    }
}

impl FromStr for LayerSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(LayerSelection::All),
            "first-half" => Ok(LayerSelection::FirstHalf),
            "second-half" => Ok(LayerSelection::SecondHalf),
            "q1" | "q2" | "q3" | "q4" => Ok(LayerSelection::Quarter(s[1..].parse().expect("digit"))),
            other => Err(Error::Config(format!("unknown layer selection {other:?}"))),
        }
    }
}

impl std::fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSelection::All => f.write_str("all"),
            LayerSelection::FirstHalf => f.write_str("first-half"),
            LayerSelection::SecondHalf => f.write_str("second-half"),
            LayerSelection::Quarter(q) => write!(f, "q{q}"),
        }
    }
}

impl Serialize for LayerSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Independent fine-tuning runs, seeded `seed`, `seed + 1`, ...
    pub seeds: usize,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub synth: SynthSpec,
    pub preprocess: PreprocessConfig,
    pub backbone: SsmdpConfig,
    pub pretrain: PretrainConfig,
    pub extract: ExtractConfig,
    /// Classifier template; input shape fields are filled from the data.
    pub lft: LftConfig,
    pub finetune: FinetuneConfig,
    pub layers: LayerSelection,
    /// Standardise pooled latents with train-split statistics.
    pub normalize_latents: bool,
    /// Explicit latent cache to fine-tune from.
    pub latent_cache: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Sizes that train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            seeds: 3,
            data_dir: "data".into(),
            run_dir: "runs".into(),
            synth: SynthSpec::default(),
            preprocess: PreprocessConfig::default(),
            backbone: SsmdpConfig::tiny(4, 32, 32, 4),
            pretrain: PretrainConfig {
                optim: OptimConfig {
                    epochs: 20,
                    batch_size: 16,
                    schedule: LrSchedule::Constant { lr: 2e-3 },
                    ema_warmup: true,
                    ..OptimConfig::pretrain()
                },
                crop: Some(200),
                seed: 0,
            },
            extract: ExtractConfig::default(),
            lft: LftConfig {
                latent_dim: 32,
                dim: 32,
                heads: 4,
                mlp_hidden: 64,
                fusion_tokens: 4,
                fusion_blocks: 4,
                encoder_blocks: 2,
                channels: 4,
                pools: 5,
                num_classes: 3,
                fusion: FusionKind::Latent,
                dropout: 0.0,
            },
            finetune: FinetuneConfig {
                optim: OptimConfig {
                    batch_size: 32,
                    schedule: LrSchedule::OneCycle { initial: 1e-4, peak: 2e-3, floor: 1e-5, warmup_epochs: 3.0 },
                    ema_warmup: true,
                    ..OptimConfig::finetune()
                },
                ..FinetuneConfig::default()
            },
            layers: LayerSelection::All,
            normalize_latents: true,
            latent_cache: None,
        }
    }

    /// Full-size models and optimiser settings.
    pub fn paper() -> Self {
        Self {
            seeds: 5,
            backbone: SsmdpConfig::paper(),
            pretrain: PretrainConfig::default(),
            lft: LftConfig::default(),
            finetune: FinetuneConfig::default(),
            normalize_latents: false,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    /// Applies a JSON object whose keys may be dotted paths.
    pub fn merge_json(&mut self, overrides: &Value) -> Result<()> {
        let Value::Object(map) = overrides else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        let mut root = serde_json::to_value(&*self).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in map {
            set_path(&mut root, key, value.clone())?;
        }
        *self = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.merge_json(&value)
    }

    /// `key=value`, where the value is parsed as JSON and falls back to a string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut map = Map::new();
        map.insert(key.trim().to_string(), value);
        self.merge_json(&Value::Object(map))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.synth.validate()?;
        self.backbone.validate()?;
        self.pretrain.optim.validate()?;
        self.finetune.optim.validate()?;
        if self.pretrain.crop == Some(0) {
            return Err(Error::Config("crop length must be positive".into()));
        }
        if self.extract.pools == 0 || self.extract.chunk == 0 {
            return Err(Error::Config("pool count and extraction chunk must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.finetune.label_smoothing) {
            return Err(Error::Config("label smoothing must lie in [0, 1)".into()));
        }
        if self.preprocess.target_rate <= 0.0 || self.preprocess.window_secs <= 0.0 {
            return Err(Error::Config("target rate and window length must be positive".into()));
        }
        if self.preprocess.window_len() % self.extract.pools != 0 {
            return Err(Error::Config(format!(
                "window of {} samples does not split into {} pools",
                self.preprocess.window_len(),
                self.extract.pools
            )));
        }
        self.layers.indices(self.backbone.n_layers)?;
        self.resolve_lft(self.synth.channels, self.synth.recipes.len())?.validate()
    }

    /// Classifier for `channels` inputs and `classes` outputs over the
    /// selected layers. Ablated layer sets and fusion strategies keep the
    /// parameter count of the full configuration.
    pub fn resolve_lft(&self, channels: usize, classes: usize) -> Result<LftConfig> {
        let full = LftConfig {
            latent_dim: self.backbone.gate_channels,
            channels,
            num_classes: classes,
            pools: self.extract.pools,
            fusion_blocks: self.backbone.n_layers,
            fusion: FusionKind::Latent,
            ..self.lft.clone()
        };
        let used = self.layers.indices(self.backbone.n_layers)?.len();
        let cfg = if used == full.fusion_blocks { full.clone() } else { full.for_layer_count(used) };
        let cfg = cfg.for_fusion(self.lft.fusion);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(Error::Config(format!("{key}: {} is not a section", parts[..i].join("."))));
        };
        let Some(child) = map.get_mut(*part) else {
            return Err(Error::Config(format!("unknown configuration key {key:?}")));
        };
        node = child;
    }
    merge_value(node, value);
    Ok(())
}

fn merge_value(target: &mut Value, value: Value) {
    match (target, value) {
        (Value::Object(t), Value::Object(v)) if !v.contains_key("kind") => {
            for (k, v) in v {
                match t.get_mut(&k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        t.insert(k, v);
                    }
                }
            }
        }
        (t, v) => *t = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_sections() {
        let mut cfg = RunConfig::desk();
        cfg.merge_json(&serde_json::json!({
            "backbone.n_layers": 8,
            "pretrain": {"optim": {"epochs": 3}},
            "pretrain.optim.schedule": {"kind": "one_cycle", "initial": 1e-5, "peak": 1e-3, "floor": 1e-6, "warmup_epochs": 1.0},
        }))
        .unwrap();
        assert_eq!(cfg.backbone.n_layers, 8);
        assert_eq!(cfg.pretrain.optim.epochs, 3);
        assert_eq!(cfg.pretrain.optim.schedule.peak(), 1e-3);
        cfg.set("extract.pool=avg").unwrap();
        assert_eq!(cfg.extract.pool, eegdm::latent::PoolKind::Avg);
        cfg.set("layers=second-half").unwrap();
        assert_eq!(cfg.layers, LayerSelection::SecondHalf);
        assert!(cfg.set("backbone.depth=3").is_err());
        assert!(cfg.set("no_equals").is_err());
        assert!(cfg.set("backbone.n_layers=\"x\"").is_err());
    }

    #[test]
    fn layer_selections() {
        assert_eq!(LayerSelection::SecondHalf.indices(20).unwrap(), (10..20).collect::<Vec<_>>());
        assert_eq!(LayerSelection::Quarter(2).indices(20).unwrap(), vec![5, 6, 7, 8, 9]);
        assert!(LayerSelection::Quarter(1).indices(6).is_err());
        assert!(LayerSelection::FirstHalf.indices(1).is_err());
        assert_eq!("q3".parse::<LayerSelection>().unwrap(), LayerSelection::Quarter(3));
        assert!("q5".parse::<LayerSelection>().is_err());
    }

    #[test]
    fn resolved_classifier_follows_the_ablations() {
        let mut cfg = RunConfig::paper();
        cfg.synth.channels = 22;
        let full = cfg.resolve_lft(22, 6).unwrap();
        assert_eq!(full.fusion_blocks, 20);
        cfg.layers = LayerSelection::SecondHalf;
        let half = cfg.resolve_lft(22, 6).unwrap();
        assert_eq!(half.fusion_blocks, 10);
        assert!(half.encoder_blocks > full.encoder_blocks);
        cfg.layers = LayerSelection::All;
        cfg.lft.fusion = FusionKind::None;
        let none = cfg.resolve_lft(22, 6).unwrap();
        assert_eq!(none.fusion, FusionKind::None);
        let rel = (none.param_count() as f64 - full.param_count() as f64).abs() / full.param_count() as f64;
        assert!(rel < 0.1, "{rel}");
    }

    #[test]
    fn presets_validate() {
        RunConfig::desk().validate().unwrap();
        RunConfig::paper().validate().unwrap();
        let mut bad = RunConfig::desk();
        bad.extract.pools = 7;
        assert!(bad.validate().is_err());
    }
}
