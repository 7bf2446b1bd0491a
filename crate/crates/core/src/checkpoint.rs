//! On-disk model snapshots.
//!
//! A checkpoint directory holds `manifest.json` (kind, config, tensor index),
//! one little-endian `f32` blob per parameter tensor under `params/`, the
//! EMA weights under `ema/` and, optionally, optimiser state under `state/`
//! (moments and EMA shadow as little-endian `f64`).

use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::training::{AdamW, Ema, TrainState};
use crate::Module;

const MANIFEST: &str = "manifest.json";
const STATE: &str = "state.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub has_ema: bool,
    pub has_state: bool,
    /// Free-form provenance (seed, data fingerprint, normaliser, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateMeta {
    step: u64,
    epoch: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    adam_step: u64,
    ema_decay: f64,
    ema_warmup: bool,
    ema_updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: Vec<Vec<f32>>,
    pub ema: Option<Vec<Vec<f32>>>,
    pub state: Option<TrainState>,
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    fs::write(path, values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>())?;
    Ok(())
}

pub fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    ensure!(bytes.len() == expected * 4, Format, "{} holds {} bytes, expected {}", path.display(), bytes.len(), expected * 4);
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn write_f64(path: &Path, values: &[f64]) -> Result<()> {
    fs::write(path, values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>())?;
    Ok(())
}

fn read_f64(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    ensure!(bytes.len() == expected * 8, Format, "{} holds {} bytes, expected {}", path.display(), bytes.len(), expected * 8);
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

impl Checkpoint {
    /// Captures `model` with its config; EMA weights and resumable state are
    /// taken from `state` when given.
    pub fn capture<M: Module<f32>>(kind: &str, config: &impl Serialize, model: &M, state: Option<&TrainState>, extra: serde_json::Value) -> Result<Self> {
        let params = model.params();
        let tensors = params
            .iter()
            .enumerate()
            .map(|(i, p)| TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), file: format!("{i:04}.bin") })
            .collect();
        let manifest = Manifest {
            kind: kind.to_string(),
            config: serde_json::to_value(config)?,
            tensors,
            has_ema: state.is_some(),
            has_state: state.is_some(),
            extra,
        };
        Ok(Self { manifest, params: model.snapshot(), ema: state.map(|s| s.ema.values()), state: state.cloned() })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("params"))?;
        for (e, v) in self.manifest.tensors.iter().zip(&self.params) {
            write_f32(&dir.join("params").join(&e.file), v)?;
        }
        if let Some(ema) = &self.ema {
            fs::create_dir_all(dir.join("ema"))?;
            for (e, v) in self.manifest.tensors.iter().zip(ema) {
                write_f32(&dir.join("ema").join(&e.file), v)?;
            }
        }
        if let Some(s) = &self.state {
            let sd = dir.join("state");
            fs::create_dir_all(&sd)?;
            let meta = StateMeta {
                step: s.step,
                epoch: s.epoch,
                beta1: s.optimizer.beta1,
                beta2: s.optimizer.beta2,
                eps: s.optimizer.eps,
                weight_decay: s.optimizer.weight_decay,
                adam_step: s.optimizer.step,
                ema_decay: s.ema.decay,
                ema_warmup: s.ema.warmup,
                ema_updates: s.ema.updates,
            };
            fs::write(sd.join(STATE), serde_json::to_vec_pretty(&meta)?)?;
            for (i, e) in self.manifest.tensors.iter().enumerate() {
                if let (Some(m), Some(v)) = (s.optimizer.m.get(i), s.optimizer.v.get(i)) {
                    write_f64(&sd.join(format!("m_{}", e.file)), m)?;
                    write_f64(&sd.join(format!("v_{}", e.file)), v)?;
                }
                write_f64(&sd.join(format!("ema_{}", e.file)), &s.ema.shadow[i])?;
            }
        }
        // Written last so a partial directory never looks complete.
        fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        if !path.is_file() {
            return Err(Error::Io(io::Error::new(io::ErrorKind::NotFound, format!("no checkpoint at {}", dir.display()))));
        }
        let manifest: Manifest = serde_json::from_slice(&fs::read(&path)?)?;
        let sizes: Vec<usize> = manifest.tensors.iter().map(|e| e.shape.iter().product()).collect();
        let blobs = |sub: &str| -> Result<Vec<Vec<f32>>> {
            manifest.tensors.iter().zip(&sizes).map(|(e, &n)| read_f32(&dir.join(sub).join(&e.file), n)).collect()
        };
        let params = blobs("params")?;
        let ema = if manifest.has_ema { Some(blobs("ema")?) } else { None };
        let state = if manifest.has_state {
            let sd = dir.join("state");
            let meta: StateMeta = serde_json::from_slice(&fs::read(sd.join(STATE))?)?;
            let mut optimizer = AdamW::new(meta.beta1, meta.beta2, meta.eps, meta.weight_decay)?;
            optimizer.step = meta.adam_step;
            let mut shadow = Vec::new();
            for (e, &n) in manifest.tensors.iter().zip(&sizes) {
                if meta.adam_step > 0 {
                    optimizer.m.push(read_f64(&sd.join(format!("m_{}", e.file)), n)?);
                    optimizer.v.push(read_f64(&sd.join(format!("v_{}", e.file)), n)?);
                }
                shadow.push(read_f64(&sd.join(format!("ema_{}", e.file)), n)?);
            }
            let ema = Ema { decay: meta.ema_decay, warmup: meta.ema_warmup, updates: meta.ema_updates, shadow };
            Some(TrainState { optimizer, ema, step: meta.step, epoch: meta.epoch })
        } else {
            None
        };
        Ok(Self { manifest, params, ema, state })
    }

    pub fn config<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.manifest.config.clone())?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        ensure!(self.manifest.kind == kind, InvalidArgument, "checkpoint holds a {}, expected a {kind}", self.manifest.kind);
        Ok(())
    }

    /// Copies the raw (or EMA) weights into `model`, checking names and shapes.
    pub fn load_into<M: Module<f32>>(&self, model: &mut M, use_ema: bool) -> Result<()> {
        let values = if use_ema {
            self.ema.as_ref().ok_or_else(|| Error::InvalidArgument("checkpoint has no EMA weights".into()))?
        } else {
            &self.params
        };
        {
            let params = model.params();
            ensure!(params.len() == self.manifest.tensors.len(), Shape, "checkpoint has {} tensors, model has {}", self.manifest.tensors.len(), params.len());
            for (p, e) in params.iter().zip(&self.manifest.tensors) {
                ensure!(p.name == e.name && p.value.shape() == e.shape.as_slice(), Shape, "checkpoint tensor {} {:?} does not match {} {:?}", e.name, e.shape, p.name, p.value.shape());
            }
        }
        model.load_snapshot(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lft::{Lft, LftConfig};
    use crate::numerics::rng::seeded;
    use crate::training::OptimConfig;

    fn small() -> LftConfig {
        LftConfig { latent_dim: 4, dim: 8, heads: 2, mlp_hidden: 16, fusion_tokens: 2, fusion_blocks: 2, encoder_blocks: 1, channels: 2, pools: 2, num_classes: 3, ..LftConfig::default() }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = Lft::<f32>::new(small(), &mut seeded(0)).unwrap();
        let mut state = TrainState::new(&model, &OptimConfig::finetune()).unwrap();
        for p in model.params_mut() {
            p.grad.fill(0.1);
        }
        state.apply(&mut model, &OptimConfig::finetune(), 1e-3).unwrap();
        let ck = Checkpoint::capture("lft", model.config(), &model, Some(&state), serde_json::json!({"seed": 0})).unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
        let cfg: LftConfig = back.config().unwrap();
        let mut other = Lft::<f32>::new(cfg, &mut seeded(9)).unwrap();
        back.load_into(&mut other, false).unwrap();
        assert_eq!(other.snapshot(), model.snapshot());
        back.load_into(&mut other, true).unwrap();
        assert_eq!(other.snapshot(), state.ema.values::<f32>());
        assert!(back.expect_kind("backbone").is_err());
    }

    #[test]
    fn mismatches_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
        let model = Lft::<f32>::new(small(), &mut seeded(0)).unwrap();
        let ck = Checkpoint::capture("lft", model.config(), &model, None, serde_json::Value::Null).unwrap();
        ck.save(dir.path()).unwrap();
        let mut bigger = Lft::<f32>::new(LftConfig { dim: 16, ..small() }, &mut seeded(0)).unwrap();
        assert!(ck.load_into(&mut bigger, false).is_err());
        assert!(ck.load_into(&mut bigger, true).is_err());
        fs::write(dir.path().join("params/0000.bin"), [0u8; 3]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Format(_))));
    }
}
