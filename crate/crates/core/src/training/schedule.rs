use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// Linear warm-up from `initial` to `peak`, then cosine decay to `floor`.
    OneCycle { initial: f64, peak: f64, floor: f64, warmup_epochs: f64 },
}

impl LrSchedule {
    pub fn one_cycle() -> Self {
        LrSchedule::OneCycle { initial: 1e-5, peak: 5e-4, floor: 1e-6, warmup_epochs: 5.0 }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::OneCycle { peak, .. } => peak,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Constant { lr } => ensure!(lr > 0.0, Config, "learning rate must be positive"),
            LrSchedule::OneCycle { initial, peak, floor, warmup_epochs } => ensure!(
                initial > 0.0 && peak >= initial && floor > 0.0 && floor <= peak && warmup_epochs >= 0.0,
                Config,
                "one-cycle schedule needs 0 < initial ≤ peak and 0 < floor ≤ peak"
            ),
        }
        Ok(())
    }

    /// Learning rate at `step` of `total` with `steps_per_epoch` steps per epoch.
    pub fn lr(&self, step: usize, total: usize, steps_per_epoch: usize) -> Result<f64> {
        ensure!(total > 0, InvalidArgument, "schedule over zero steps");
        ensure!(step <= total, InvalidArgument, "step {step} beyond {total}");
        Ok(match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::OneCycle { initial, peak, floor, warmup_epochs } => {
                let warmup = ((warmup_epochs * steps_per_epoch as f64).round() as usize).min(total);
                one_cycle_lr(step, total, warmup, initial, peak, floor)
            }
        })
    }
}

pub fn one_cycle_lr(step: usize, total: usize, warmup: usize, initial: f64, peak: f64, floor: f64) -> f64 {
    if step < warmup {
        initial + (peak - initial) * step as f64 / warmup as f64
    } else if total == warmup {
        peak
    } else {
        let frac = (step - warmup) as f64 / (total - warmup) as f64;
        floor + (peak - floor) * 0.5 * (1.0 + (PI * frac).cos())
    }
}
