use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Offset `s` of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
pub const ALPHA_BAR_CLIP: f64 = 1e-5;

/// Where the discrete steps sample the continuous cosine curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CosineGrid {
    /// `ᾱ_t = f((t - ½)/T) / f(0)`.
    #[default]
    Midpoint,
    /// `ᾱ_t = f(t/T) / f(0)`.
    Endpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine { grid: CosineGrid },
    Linear { beta_start: f64, beta_end: f64 },
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::Cosine { grid: CosineGrid::Midpoint }
    }
}

impl ScheduleKind {
    /// Linear betas rescaled from the thousand-step range `[1e-4, 0.02]`.
    pub fn scaled_linear(steps: usize) -> Self {
        let scale = 1000.0 / steps.max(1) as f64;
        ScheduleKind::Linear { beta_start: (scale * 1e-4).min(0.5), beta_end: (scale * 0.02).min(0.999) }
    }

    pub fn build(&self, steps: usize) -> Result<NoiseSchedule> {
        match *self {
            ScheduleKind::Cosine { grid } => cosine_schedule_on(steps, grid),
            ScheduleKind::Linear { beta_start, beta_end } => linear_schedule(steps, beta_start, beta_end),
        }
    }
}

/// Cumulative signal fractions `ᾱ_1 … ᾱ_T`, with `ᾱ_0 = 1` implied.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        ensure!(!alpha_bar.is_empty(), InvalidArgument, "schedule needs at least one step");
        ensure!(
            alpha_bar.iter().all(|&a| a > 0.0 && a < 1.0),
            InvalidArgument,
            "alpha_bar entries must lie in (0, 1)"
        );
        ensure!(
            alpha_bar.windows(2).all(|w| w[1] < w[0]),
            InvalidArgument,
            "alpha_bar must be strictly decreasing"
        );
        Ok(Self { alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        ensure!(t >= 1 && t <= self.steps(), InvalidArgument, "diffusion step {t} outside [1, {}]", self.steps());
        Ok(())
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`; `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// `β_t = 1 - ᾱ_t / ᾱ_{t-1}`.
    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar(t) / self.alpha_bar(t - 1)
    }

    /// Posterior variance `β̃_t = (1 - ᾱ_{t-1}) / (1 - ᾱ_t) · β_t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.posterior_variance(t).sqrt()
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0·x̂₀ + ct·x_t`.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let (ab, ab_prev, beta) = (self.alpha_bar(t), self.alpha_bar(t - 1), self.beta(t));
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct)
    }

    /// CSV with columns `t,alpha_bar,sqrt_alpha_bar,sigma`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,alpha_bar,sqrt_alpha_bar,sigma\n");
        for t in 1..=self.steps() {
            let _ = writeln!(s, "{t},{:.10e},{:.10e},{:.10e}", self.alpha_bar(t), self.sqrt_alpha_bar(t), self.sigma(t));
        }
        s
    }
}

fn cosine_f(u: f64) -> f64 {
    (((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * FRAC_PI_2).cos().powi(2)
}

pub fn cosine_schedule(steps: usize) -> Result<NoiseSchedule> {
    cosine_schedule_on(steps, CosineGrid::default())
}

pub fn cosine_schedule_on(steps: usize, grid: CosineGrid) -> Result<NoiseSchedule> {
    ensure!(steps >= 1, InvalidArgument, "cosine schedule needs T ≥ 1");
    let f0 = cosine_f(0.0);
    let shift = match grid {
        CosineGrid::Midpoint => 0.5,
        CosineGrid::Endpoint => 0.0,
    };
    let ab = (1..=steps)
        .map(|t| (cosine_f((t as f64 - shift) / steps as f64) / f0).clamp(ALPHA_BAR_CLIP, 1.0 - ALPHA_BAR_CLIP))
        .collect();
    NoiseSchedule::from_alpha_bar(ab)
}

pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    ensure!(steps >= 1, InvalidArgument, "linear schedule needs T ≥ 1");
    ensure!(
        0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0,
        InvalidArgument,
        "need 0 < beta_start ≤ beta_end < 1, got [{beta_start}, {beta_end}]"
    );
    let mut acc = 1.0;
    let ab = (0..steps)
        .map(|i| {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            acc *= 1.0 - (beta_start + frac * (beta_end - beta_start));
            acc
        })
        .collect();
    NoiseSchedule::from_alpha_bar(ab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_fifty_steps_bounds() {
        let s = cosine_schedule(50).unwrap();
        assert!(s.alpha_bar(1) >= 0.999, "{}", s.alpha_bar(1));
        assert!(s.alpha_bar(50) < 0.01);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn endpoint_grid_midway_value() {
        let s = cosine_schedule_on(50, CosineGrid::Endpoint).unwrap();
        let want = ((0.508f64 / 1.008) * FRAC_PI_2).cos().powi(2) / ((0.008f64 / 1.008) * FRAC_PI_2).cos().powi(2);
        assert!((s.alpha_bar(25) - want).abs() < 1e-12);
        assert!((s.alpha_bar(25) - 0.4938).abs() < 1e-3);
    }

    #[test]
    fn linear_products() {
        assert!((linear_schedule(1, 0.1, 0.1).unwrap().alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((linear_schedule(2, 0.1, 0.2).unwrap().alpha_bar(2) - 0.72).abs() < 1e-15);
        assert!(linear_schedule(2, 0.2, 0.1).is_err());
        assert!(linear_schedule(2, 0.0, 0.1).is_err());
        assert!(cosine_schedule(0).is_err());
    }

    #[test]
    fn first_step_posterior_is_the_clean_estimate() {
        let s = cosine_schedule(50).unwrap();
        let (c0, ct) = s.posterior_mean_coefs(1);
        assert!((c0 - 1.0).abs() < 1e-12 && ct.abs() < 1e-12);
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn csv_has_header_and_one_row_per_step() {
        let csv = cosine_schedule(5).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,alpha_bar,sqrt_alpha_bar,sigma");
        assert_eq!(lines.len(), 6);
    }

    proptest! {
        #[test]
        fn linear_is_decreasing_and_bounded(b0 in 1e-4f64..0.3, extra in 0.0f64..0.5, t in 1usize..200) {
            let s = linear_schedule(t, b0, (b0 + extra).min(0.99)).unwrap();
            prop_assert!(s.alpha_bars().iter().all(|&a| a > 0.0 && a < 1.0));
            prop_assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        }

        #[test]
        fn cosine_is_decreasing_for_moderate_lengths(t in 1usize..300) {
            let s = cosine_schedule(t).unwrap();
            prop_assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        }
    }
}
