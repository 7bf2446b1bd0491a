use serde::{Deserialize, Serialize};

use super::{class_weights, epoch_batches, smoothed_weighted_ce, EarlyStopping, EpochRecord, OptimConfig, TrainState};
use crate::attention::Dropout;
use crate::error::{ensure, Error, Result};
use crate::latent::PooledBatch;
use crate::lft::Lft;
use crate::metrics::MetricReport;
use crate::numerics::rng::child;
use crate::{Float, Module};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub optim: OptimConfig,
    pub label_smoothing: f64,
    pub class_weighted: bool,
    pub early_stopping: bool,
    pub min_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::finetune(),
            label_smoothing: 0.1,
            class_weighted: false,
            early_stopping: true,
            min_epochs: 20,
            patience: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub stopped_epoch: usize,
}

/// Class probabilities, `(segments, k)` row-major.
pub fn predict_probs<F: Float>(model: &Lft<F>, batch: &PooledBatch<F>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.segments * model.config().num_classes);
    for i in 0..batch.segments {
        out.extend(model.predict_proba(batch.sample(i))?.into_iter().map(|p| p.f64()));
    }
    Ok(out)
}

pub fn evaluate<F: Float>(model: &Lft<F>, batch: &PooledBatch<F>, labels: &[usize]) -> Result<MetricReport> {
    ensure!(labels.len() == batch.segments, Shape, "{} labels for {} segments", labels.len(), batch.segments);
    MetricReport::from_probs(&predict_probs(model, batch)?, labels, model.config().num_classes)
}

/// Supervised training of the classifier on pooled latents.
///
/// Each epoch is scored by Cohen's kappa of the EMA weights on `valid`
/// (or on `train` when absent). The model ends holding the EMA weights
/// of the best epoch.
pub fn finetune<F: Float>(
    model: &mut Lft<F>,
    train: &PooledBatch<F>,
    train_labels: &[usize],
    valid: Option<(&PooledBatch<F>, &[usize])>,
    cfg: &FinetuneConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<FinetuneOutcome> {
    cfg.optim.validate()?;
    let k = model.config().num_classes;
    ensure!(train.segments > 0 && train_labels.len() == train.segments, Shape, "{} labels for {} segments", train_labels.len(), train.segments);
    ensure!(train.sample_len() == model.sample_len(), Shape, "pooled samples have {} values, classifier expects {}", train.sample_len(), model.sample_len());
    let weights = cfg.class_weighted.then(|| class_weights(train_labels, k));
    let mut state = TrainState::new(model, &cfg.optim)?;
    let spe = cfg.optim.steps_per_epoch(train.segments);
    let total = spe * cfg.optim.epochs;
    let rate = model.config().dropout;
    let mut drop = (rate > 0.0).then(|| Dropout { rate, rng: child(cfg.seed, &[3]) });
    let mut stopper = EarlyStopping::new(cfg.min_epochs, cfg.patience);
    let mut best = model.snapshot();
    let mut history = Vec::new();

    for epoch in 1..=cfg.optim.epochs {
        let mut rng = child(cfg.seed, &[4, epoch as u64]);
        let batches = epoch_batches(train.segments, cfg.optim.batch_size, &mut rng);
        let (mut loss_sum, mut lr) = (0.0, 0.0);
        for idx in &batches {
            let mut logits = Vec::with_capacity(idx.len() * k);
            let mut caches = Vec::with_capacity(idx.len());
            for &i in idx {
                let (l, c) = model.forward(train.sample(i), drop.as_mut())?;
                logits.extend(l);
                caches.push(c);
            }
            let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            let (loss, dlogits) = smoothed_weighted_ce(&logits, &labels, k, cfg.label_smoothing, weights.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("classifier loss is {loss} at step {}", state.step)));
            }
            model.zero_grad();
            for (j, c) in caches.iter().enumerate() {
                model.backward(c, &dlogits[j * k..(j + 1) * k])?;
            }
            lr = cfg.optim.schedule.lr(state.step as usize, total, spe)?;
            state.apply(model, &cfg.optim, lr)?;
            loss_sum += loss;
        }
        let (vb, vl) = valid.unwrap_or((train, train_labels));
        let score = state.with_ema(model, |m| Ok(evaluate(m, vb, vl)?.kappa))?;
        if stopper.observe(epoch, score) {
            best = state.ema.values();
        }
        let rec = EpochRecord { epoch, step: state.step, lr, loss: loss_sum / batches.len() as f64, val_metric: Some(score) };
        log::info!("finetune epoch {epoch} loss {:.4} kappa {score:.4}", rec.loss);
        on_epoch(&rec)?;
        history.push(rec);
        if cfg.early_stopping && stopper.should_stop() {
            break;
        }
    }
    model.load_snapshot(&best)?;
    let (best_epoch, best_score) = stopper.best().expect("at least one epoch");
    Ok(FinetuneOutcome { stopped_epoch: history.len(), history, best_epoch, best_score })
}
