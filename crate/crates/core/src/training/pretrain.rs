use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{epoch_batches, EpochRecord, OptimConfig, TrainState};
use crate::backbone::Ssmdp;
use crate::diffusion::{diffusion_loss, velocity_loss_grad, DiffusionDraw};
use crate::error::{ensure, Error, Result};
use crate::numerics::rng::{child, Rng};
use crate::signal::SegmentBatch;
use crate::{Float, Module};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub optim: OptimConfig,
    /// Train on random windows of this many samples instead of whole segments.
    pub crop: Option<usize>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { optim: OptimConfig::pretrain(), crop: None, seed: 0 }
    }
}

/// One random window of `len` samples per segment, shared by its channels.
pub fn crop_batch(batch: &SegmentBatch, len: usize, rng: &mut Rng) -> Result<SegmentBatch> {
    ensure!(len > 0 && len <= batch.samples, InvalidArgument, "crop of {len} from segments of {}", batch.samples);
    if len == batch.samples {
        return Ok(batch.clone());
    }
    let mut signals = Vec::with_capacity(batch.len() * batch.channels * len);
    for i in 0..batch.len() {
        let start = rng.random_range(0..=batch.samples - len);
        for c in 0..batch.channels {
            signals.extend_from_slice(&batch.row(i, c)[start..start + len]);
        }
    }
    SegmentBatch::new(signals, batch.channels, len, batch.labels.clone(), batch.sample_rate, batch.channel_ids.clone())
}

fn rows<F: Float>(batch: &SegmentBatch) -> (Vec<F>, Vec<usize>) {
    let x = batch.signals.iter().map(|&v| F::of(v as f64)).collect();
    let ch = (0..batch.len()).flat_map(|_| batch.channel_ids.iter().copied()).collect();
    (x, ch)
}

/// Diffusion pretraining from `state.epoch` up to `cfg.optim.epochs`.
///
/// The validation loss uses the EMA weights and a fixed noise draw.
/// `on_epoch` sees every record with the model and state after that epoch.
pub fn pretrain<F: Float>(
    model: &mut Ssmdp<F>,
    state: &mut TrainState,
    train: &SegmentBatch,
    valid: Option<&SegmentBatch>,
    cfg: &PretrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Ssmdp<F>, &TrainState) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.optim.validate()?;
    ensure!(!train.is_empty(), InvalidArgument, "empty training set");
    let spe = cfg.optim.steps_per_epoch(train.len());
    let total = spe * cfg.optim.epochs;
    let sched = model.schedule().clone();
    let mut history = Vec::new();
    while state.epoch < cfg.optim.epochs {
        let epoch = state.epoch;
        let mut rng = child(cfg.seed, &[1, epoch as u64]);
        let (mut loss_sum, mut lr) = (0.0, 0.0);
        let batches = epoch_batches(train.len(), cfg.optim.batch_size, &mut rng);
        for idx in &batches {
            let mut batch = train.select(idx);
            if let Some(len) = cfg.crop {
                batch = crop_batch(&batch, len.min(batch.samples), &mut rng)?;
            }
            let (x0, channels) = rows::<F>(&batch);
            let draw = DiffusionDraw::sample(&x0, batch.samples, &sched, &mut rng)?;
            let out = model.forward(&draw.noised, batch.samples, &draw.steps, &channels, None, true)?;
            let (loss, grad) = velocity_loss_grad(&out.output, &draw.target)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("pretraining loss is {loss} at step {}", state.step)));
            }
            model.zero_grad();
            model.backward(out.cache.as_ref().expect("cache requested"), &grad, None)?;
            lr = cfg.optim.schedule.lr((state.step as usize).min(total), total, spe)?;
            state.apply(model, &cfg.optim, lr)?;
            loss_sum += loss;
        }
        state.epoch += 1;
        let val_metric = match valid {
            Some(v) if !v.is_empty() => Some(state.with_ema(model, |m| {
                let mut rng = child(cfg.seed, &[2]);
                diffusion_loss(m, v, &sched, &mut rng)
            })?),
            _ => None,
        };
        let rec = EpochRecord { epoch: state.epoch, step: state.step, lr, loss: loss_sum / batches.len() as f64, val_metric };
        log::info!("pretrain epoch {} loss {:.5} val {:?}", rec.epoch, rec.loss, rec.val_metric);
        on_epoch(&rec, model, state)?;
        history.push(rec);
    }
    Ok(history)
}
