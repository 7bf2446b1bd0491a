use eegdm::backbone::{Ssmdp, SsmdpConfig};
use eegdm::latent::{PoolKind, PooledBatch};
use eegdm::lft::{FusionKind, Lft, LftConfig};
use eegdm::numerics::rng::{normal, seeded};
use eegdm::signal::SegmentBatch;
use eegdm::training::{evaluate, finetune, pretrain, FinetuneConfig, LrSchedule, OptimConfig, PretrainConfig, TrainState};
use eegdm::Module;

fn sines(n: usize, channels: usize, len: usize) -> SegmentBatch {
    let mut rng = seeded(5);
    let mut signals = Vec::new();
    for i in 0..n {
        for c in 0..channels {
            let f = 0.05 + 0.02 * ((i + c) % 3) as f64;
            for t in 0..len {
                signals.push(((f * t as f64 * 6.28).sin() * 0.8 + 0.1 * normal::<f64, _>(&mut rng)) as f32);
            }
        }
    }
    SegmentBatch::new(signals, channels, len, vec![0; n], 100.0, (0..channels).collect()).unwrap()
}

fn pretrain_cfg(epochs: usize) -> PretrainConfig {
    PretrainConfig {
        optim: OptimConfig { epochs, batch_size: 4, schedule: LrSchedule::Constant { lr: 2e-3 }, ema_decay: 0.9, ema_warmup: true, ..OptimConfig::pretrain() },
        crop: Some(48),
        seed: 11,
    }
}

fn backbone() -> Ssmdp<f32> {
    Ssmdp::new(SsmdpConfig::tiny(2, 8, 4, 2), &mut seeded(1)).unwrap()
}

#[test]
fn pretraining_reduces_validation_loss_and_is_reproducible() {
    let data = sines(12, 2, 64);
    let cfg = pretrain_cfg(12);
    let run = || {
        let mut m = backbone();
        let mut state = TrainState::new(&m, &cfg.optim).unwrap();
        let hist = pretrain(&mut m, &mut state, &data, Some(&data), &cfg, &mut |_, _, _| Ok(())).unwrap();
        (m.snapshot(), hist)
    };
    let (a, hist) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    let first = hist[0].val_metric.unwrap();
    let last = hist.last().unwrap().val_metric.unwrap();
    assert!(last < first, "validation loss {first} -> {last}");
    assert_eq!(hist.last().unwrap().step, 36);
}

#[test]
fn resumed_pretraining_matches_an_uninterrupted_run() {
    let data = sines(8, 2, 64);
    let full_cfg = pretrain_cfg(4);
    let mut full = backbone();
    let mut s = TrainState::new(&full, &full_cfg.optim).unwrap();
    pretrain(&mut full, &mut s, &data, None, &full_cfg, &mut |_, _, _| Ok(())).unwrap();

    let mut part = backbone();
    let mut s2 = TrainState::new(&part, &full_cfg.optim).unwrap();
    pretrain(&mut part, &mut s2, &data, None, &pretrain_cfg(2), &mut |_, _, _| Ok(())).unwrap();
    let mut resumed = s2.clone();
    let hist = pretrain(&mut part, &mut resumed, &data, None, &full_cfg, &mut |_, _, _| Ok(())).unwrap();
    assert_eq!(hist[0].epoch, 3);
    assert_eq!(resumed.step, s.step);
    assert_eq!(part.snapshot(), full.snapshot());
    assert_eq!(resumed, s);
}

fn separable(n: usize, cfg: &LftConfig, seed: u64) -> (PooledBatch<f32>, Vec<usize>) {
    let mut rng = seeded(seed);
    let per = cfg.channels * cfg.fusion_blocks * cfg.pools * cfg.latent_dim;
    let mut values = Vec::with_capacity(n * per);
    let labels: Vec<usize> = (0..n).map(|i| i % cfg.num_classes).collect();
    for &y in &labels {
        for j in 0..per {
            let signal = if j % cfg.latent_dim == y { 1.5 } else { 0.0 };
            values.push((signal + 0.5 * normal::<f64, _>(&mut rng)) as f32);
        }
    }
    let batch = PooledBatch {
        values,
        segments: n,
        channels: cfg.channels,
        layers: cfg.fusion_blocks,
        pools: cfg.pools,
        hidden: cfg.latent_dim,
        kind: PoolKind::Std,
    };
    (batch, labels)
}

fn small_lft() -> LftConfig {
    LftConfig {
        latent_dim: 6,
        dim: 16,
        heads: 2,
        mlp_hidden: 32,
        fusion_tokens: 2,
        fusion_blocks: 2,
        encoder_blocks: 1,
        channels: 2,
        pools: 2,
        num_classes: 3,
        fusion: FusionKind::Latent,
        dropout: 0.0,
    }
}

#[test]
fn finetuning_learns_a_separable_task_and_keeps_the_best_epoch() {
    let cfg = small_lft();
    let (train, ty) = separable(60, &cfg, 2);
    let (valid, vy) = separable(30, &cfg, 3);
    let ft = FinetuneConfig {
        optim: OptimConfig {
            epochs: 15,
            batch_size: 10,
            schedule: LrSchedule::OneCycle { initial: 1e-4, peak: 3e-3, floor: 1e-5, warmup_epochs: 2.0 },
            ema_decay: 0.9,
            ema_warmup: true,
            ..OptimConfig::finetune()
        },
        min_epochs: 5,
        ..FinetuneConfig::default()
    };
    let run = || {
        let mut m = Lft::<f32>::new(cfg.clone(), &mut seeded(4)).unwrap();
        let out = finetune(&mut m, &train, &ty, Some((&valid, &vy)), &ft, &mut |_| Ok(())).unwrap();
        (m, out)
    };
    let (model, out) = run();
    let (again, out2) = run();
    assert_eq!(model.snapshot(), again.snapshot());
    assert_eq!(out, out2);
    assert!(out.best_score > 0.8, "best kappa {}", out.best_score);
    let best = out.history.iter().map(|r| r.val_metric.unwrap()).fold(f64::MIN, f64::max);
    assert_eq!(best, out.best_score);
    assert_eq!(out.history[out.best_epoch - 1].val_metric, Some(out.best_score));
    let report = evaluate(&model, &valid, &vy).unwrap();
    assert!((report.kappa - out.best_score).abs() < 1e-12);
    let losses: Vec<f64> = out.history.iter().map(|r| r.loss).collect();
    assert!(losses.last().unwrap() < &losses[0]);
}
