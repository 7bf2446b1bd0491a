mod early;
mod finetune;
mod log;
mod loss;
mod optim;
mod pretrain;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::{Float, Module};

pub use early::EarlyStopping;
pub use finetune::{evaluate, finetune, predict_probs, FinetuneConfig, FinetuneOutcome};
pub use log::{read_log, EpochRecord, JsonlLog};
pub use loss::{class_weights, smoothed_weighted_ce};
pub use optim::{clip_by_global_norm, AdamW, Ema};
pub use pretrain::{crop_batch, pretrain, PretrainConfig};
pub use schedule::{one_cycle_lr, LrSchedule};

/// Optimiser, schedule and averaging settings shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub ema_decay: f64,
    pub ema_warmup: bool,
}

impl OptimConfig {
    pub fn pretrain() -> Self {
        Self {
            epochs: 100,
            batch_size: 108,
            schedule: LrSchedule::Constant { lr: 1e-4 },
            beta1: 0.99,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip: 1.0,
            ema_decay: 0.999,
            ema_warmup: false,
        }
    }

    pub fn finetune() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            schedule: LrSchedule::one_cycle(),
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.05,
            clip: 3.0,
            ema_decay: 0.999,
            ema_warmup: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs > 0 && self.batch_size > 0, Config, "epochs and batch size must be positive");
        ensure!(self.clip > 0.0, Config, "clip threshold must be positive");
        ensure!((0.0..1.0).contains(&self.ema_decay), Config, "EMA decay must lie in [0, 1)");
        self.schedule.validate()?;
        AdamW::new(self.beta1, self.beta2, self.eps, self.weight_decay).map(|_| ())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

/// Optimiser moments, EMA shadow and progress counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub optimizer: AdamW,
    pub ema: Ema,
    pub step: u64,
    pub epoch: usize,
}

impl TrainState {
    pub fn new<F: Float, M: Module<F>>(model: &M, cfg: &OptimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            optimizer: AdamW::new(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)?,
            ema: Ema::new(&model.params(), cfg.ema_decay, cfg.ema_warmup),
            step: 0,
            epoch: 0,
        })
    }

    /// Clip, update and average after gradients have been accumulated.
    pub fn apply<F: Float, M: Module<F>>(&mut self, model: &mut M, cfg: &OptimConfig, lr: f64) -> Result<()> {
        let mut params = model.params_mut();
        clip_by_global_norm(&mut params, cfg.clip);
        self.optimizer.update(&mut params, lr)?;
        drop(params);
        self.ema.update(&model.params());
        self.step += 1;
        Ok(())
    }

    /// Runs `f` with the EMA weights loaded, then restores the raw weights.
    pub fn with_ema<F: Float, M: Module<F>, T>(&self, model: &mut M, f: impl FnOnce(&mut M) -> Result<T>) -> Result<T> {
        let raw = model.snapshot();
        model.load_snapshot(&self.ema.values())?;
        let out = f(model);
        model.load_snapshot(&raw)?;
        out
    }
}

/// Shuffled minibatch index lists for one epoch.
pub(crate) fn epoch_batches(n: usize, batch: usize, rng: &mut crate::numerics::rng::Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}
