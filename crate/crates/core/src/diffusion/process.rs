use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{NoiseSchedule, VelocityModel};
use crate::error::{ensure, Result};
use crate::numerics::rng::{child, fill_normal, Rng};
use crate::signal::SegmentBatch;
use crate::Float;

/// `√ᾱ_t·x₀ + √(1-ᾱ_t)·ε`.
pub fn forward_sample<F: Float>(x0: &[F], t: usize, eps: &[F], sched: &NoiseSchedule) -> Result<Vec<F>> {
    sched.check_step(t)?;
    ensure!(x0.len() == eps.len(), Shape, "noise has {} values, signal {}", eps.len(), x0.len());
    let (a, b) = (F::of(sched.sqrt_alpha_bar(t)), F::of(sched.sqrt_one_minus_alpha_bar(t)));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// `√ᾱ_t·ε - √(1-ᾱ_t)·x₀`.
pub fn velocity_target<F: Float>(x0: &[F], eps: &[F], t: usize, sched: &NoiseSchedule) -> Result<Vec<F>> {
    sched.check_step(t)?;
    ensure!(x0.len() == eps.len(), Shape, "noise has {} values, signal {}", eps.len(), x0.len());
    let (a, b) = (F::of(sched.sqrt_alpha_bar(t)), F::of(sched.sqrt_one_minus_alpha_bar(t)));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * e - b * x).collect())
}

/// One `(t, ε)` draw per row, with the resulting noised input and target.
#[derive(Debug, Clone)]
pub struct DiffusionDraw<F> {
    pub steps: Vec<usize>,
    pub eps: Vec<F>,
    pub noised: Vec<F>,
    pub target: Vec<F>,
}

impl<F: Float> DiffusionDraw<F> {
    /// Draws `t ~ U{1..T}` and `ε ~ N(0, I)` for each of the `x0.len() / len`
    /// rows. Row `r` uses its own stream derived from one base draw on `rng`,
    /// so results do not depend on how rows are scheduled.
    pub fn sample(x0: &[F], len: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Result<Self> {
        ensure!(len > 0 && !x0.is_empty() && x0.len() % len == 0, Shape, "cannot split {} values into rows of {len}", x0.len());
        let base: u64 = rng.random();
        let rows = x0.len() / len;
        let mut draw = Self {
            steps: Vec::with_capacity(rows),
            eps: vec![F::zero(); x0.len()],
            noised: Vec::with_capacity(x0.len()),
            target: Vec::with_capacity(x0.len()),
        };
        for r in 0..rows {
            let mut row_rng = child(base, &[r as u64]);
            let t = row_rng.random_range(1..=sched.steps());
            let span = r * len..(r + 1) * len;
            fill_normal(&mut row_rng, &mut draw.eps[span.clone()]);
            draw.noised.extend(forward_sample(&x0[span.clone()], t, &draw.eps[span.clone()], sched)?);
            draw.target.extend(velocity_target(&x0[span.clone()], &draw.eps[span], t, sched)?);
            draw.steps.push(t);
        }
        Ok(draw)
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn velocity_loss_grad<F: Float>(pred: &[F], target: &[F]) -> Result<(f64, Vec<F>)> {
    ensure!(pred.len() == target.len() && !pred.is_empty(), Shape, "prediction/target length mismatch");
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let scale = F::of(2.0 / n);
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.f64() * d.f64();
            scale * d
        })
        .collect();
    Ok((loss / n, grad))
}

/// Rows of a batch in `(segment, channel)` order with their channel ids.
pub(crate) fn batch_rows<F: Float>(batch: &SegmentBatch) -> (Vec<F>, Vec<usize>) {
    let x = batch.signals.iter().map(|&v| F::of(v as f64)).collect();
    let ch = (0..batch.len()).flat_map(|_| batch.channel_ids.iter().copied()).collect();
    (x, ch)
}

/// Velocity-prediction loss averaged over segments, channels and time.
pub fn diffusion_loss<F: Float, M: VelocityModel<F> + ?Sized>(
    model: &M,
    batch: &SegmentBatch,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    ensure!(!batch.is_empty(), InvalidArgument, "diffusion loss of an empty batch");
    let (x0, channels) = batch_rows::<F>(batch);
    let draw = DiffusionDraw::sample(&x0, batch.samples, sched, rng)?;
    let pred = model.predict(&draw.noised, batch.samples, &draw.steps, &channels)?;
    Ok(velocity_loss_grad(&pred, &draw.target)?.0)
}

/// Forward process used before reading latent activities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    /// Clean signal, conditioned on step 0.
    None,
    /// `√ᾱ_t·x₀` with no noise, conditioned on step `t`.
    #[default]
    Noiseless,
}

impl std::str::FromStr for ExtractionMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ExtractionMode::None),
            "noiseless" => Ok(ExtractionMode::Noiseless),
            other => Err(crate::Error::Config(format!("unknown extraction mode {other:?}"))),
        }
    }
}

pub fn extraction_input<F: Float>(x0: &[F], mode: ExtractionMode, t: usize, sched: &NoiseSchedule) -> Result<(Vec<F>, usize)> {
    match mode {
        ExtractionMode::None => Ok((x0.to_vec(), 0)),
        ExtractionMode::Noiseless => {
            sched.check_step(t)?;
            let a = F::of(sched.sqrt_alpha_bar(t));
            Ok((x0.iter().map(|&x| a * x).collect(), t))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::cosine_schedule;
    use crate::numerics::rng::seeded;
    use proptest::prelude::*;

    fn sched_with(ab: f64) -> NoiseSchedule {
        NoiseSchedule::from_alpha_bar(vec![ab]).unwrap()
    }

    #[test]
    fn forward_and_velocity_hand_values() {
        let s = sched_with(0.64);
        assert!((forward_sample(&[1.0f64], 1, &[0.5], &s).unwrap()[0] - 1.1).abs() < 1e-12);
        let s = sched_with(0.25);
        let v = velocity_target(&[1.0f64], &[0.0], 1, &s).unwrap()[0];
        assert!((v + 0.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn near_limits() {
        let s = sched_with(1.0 - 1e-15);
        let x = forward_sample(&[0.3f64], 1, &[5.0], &s).unwrap()[0];
        assert!((x - 0.3).abs() < 1e-6);
        assert!((velocity_target(&[0.3f64], &[5.0], 1, &s).unwrap()[0] - 5.0).abs() < 1e-6);
        let s = sched_with(1e-15);
        assert!((velocity_target(&[0.3f64], &[5.0], 1, &s).unwrap()[0] + 0.3).abs() < 1e-6);
    }

    #[test]
    fn zero_noise_is_scaled_signal() {
        let s = cosine_schedule(50).unwrap();
        let x = forward_sample(&[2.0f64], 7, &[0.0], &s).unwrap()[0];
        assert_eq!(x, 2.0 * s.sqrt_alpha_bar(7));
    }

    #[test]
    fn step_out_of_range_is_rejected() {
        let s = cosine_schedule(50).unwrap();
        assert!(forward_sample(&[1.0f64], 0, &[0.0], &s).is_err());
        assert!(velocity_target(&[1.0f64], &[0.0], 51, &s).is_err());
        assert!(extraction_input(&[1.0f64], ExtractionMode::Noiseless, 0, &s).is_err());
    }

    #[test]
    fn extraction_modes() {
        let s = cosine_schedule(50).unwrap();
        let (x, t) = extraction_input(&[1.0f64, -2.0], ExtractionMode::None, 3, &s).unwrap();
        assert_eq!((x, t), (vec![1.0, -2.0], 0));
        let (x1, t1) = extraction_input(&[1.0f64], ExtractionMode::Noiseless, 1, &s).unwrap();
        assert_eq!(t1, 1);
        assert!(x1[0] > 0.9996 && x1[0] < 1.0);
        let (x3, _) = extraction_input(&[1.0f64], ExtractionMode::Noiseless, 3, &s).unwrap();
        assert!(x3[0] < x1[0]);
    }

    #[test]
    fn forward_sample_moments() {
        let s = cosine_schedule(50).unwrap();
        let t = 20;
        let mut rng = seeded(3);
        let n = 10_000;
        let mut eps = vec![0.0f64; n];
        fill_normal(&mut rng, &mut eps);
        let xt = forward_sample(&vec![1.5; n], t, &eps, &s).unwrap();
        let mean = xt.iter().sum::<f64>() / n as f64;
        let std = (xt.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let (want_mean, want_std) = (1.5 * s.sqrt_alpha_bar(t), s.sqrt_one_minus_alpha_bar(t));
        assert!((mean - want_mean).abs() / want_mean < 0.02, "{mean} vs {want_mean}");
        assert!((std - want_std).abs() / want_std < 0.02, "{std} vs {want_std}");
    }

    struct Zero;
    impl VelocityModel<f64> for Zero {
        fn predict(&self, x: &[f64], _: usize, _: &[usize], _: &[usize]) -> Result<Vec<f64>> {
            Ok(vec![0.0; x.len()])
        }
    }

    #[test]
    fn zero_model_loss_matches_monte_carlo_expectation() {
        let s = cosine_schedule(50).unwrap();
        let (rows, len) = (10_000, 4);
        let mut rng = seeded(11);
        let x0: Vec<f32> = (0..rows * len).map(|i| ((i as f32) * 0.37).sin()).collect();
        let batch = SegmentBatch::new(x0.clone(), 1, len, vec![0; rows], 200.0, vec![0]).unwrap();
        let loss = diffusion_loss::<f64, _>(&Zero, &batch, &s, &mut rng).unwrap();

        // The same draw, reproduced, gives the per-row expectation.
        let mut rng = seeded(11);
        let x0f: Vec<f64> = x0.iter().map(|&v| v as f64).collect();
        let draw = DiffusionDraw::sample(&x0f, len, &s, &mut rng).unwrap();
        let per_row: Vec<f64> = (0..rows)
            .map(|r| {
                let ab = s.alpha_bar(draw.steps[r]);
                let ex2 = x0f[r * len..(r + 1) * len].iter().map(|x| x * x).sum::<f64>() / len as f64;
                ab + (1.0 - ab) * ex2
            })
            .collect();
        let expect = per_row.iter().sum::<f64>() / rows as f64;
        let sq: Vec<f64> = draw.target.iter().map(|v| v * v).collect();
        let row_means: Vec<f64> = sq.chunks(len).map(|c| c.iter().sum::<f64>() / len as f64).collect();
        let m = row_means.iter().sum::<f64>() / rows as f64;
        let se = (row_means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (rows * (rows - 1)) as f64).sqrt();
        assert!((loss - expect).abs() < 3.0 * se, "loss {loss} expect {expect} se {se}");
        assert!(loss >= 0.0);
    }

    struct Oracle<'a>(&'a DiffusionDraw<f64>);
    impl VelocityModel<f64> for Oracle<'_> {
        fn predict(&self, _: &[f64], _: usize, _: &[usize], _: &[usize]) -> Result<Vec<f64>> {
            Ok(self.0.target.clone())
        }
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let s = cosine_schedule(50).unwrap();
        let x0: Vec<f64> = (0..64).map(|i| (i as f64).cos()).collect();
        let draw = DiffusionDraw::sample(&x0, 16, &s, &mut seeded(1)).unwrap();
        let pred = Oracle(&draw).predict(&draw.noised, 16, &draw.steps, &[0; 4]).unwrap();
        assert_eq!(velocity_loss_grad(&pred, &draw.target).unwrap().0, 0.0);
    }

    proptest! {
        #[test]
        fn clean_signal_and_noise_are_recovered(
            x0 in prop::collection::vec(-3.0f64..3.0, 1..32),
            seed in any::<u64>(),
            t in 1usize..=50,
        ) {
            let s = cosine_schedule(50).unwrap();
            let mut eps = vec![0.0; x0.len()];
            fill_normal(&mut seeded(seed), &mut eps);
            let xt = forward_sample(&x0, t, &eps, &s).unwrap();
            let v = velocity_target(&x0, &eps, t, &s).unwrap();
            let (a, b) = (s.sqrt_alpha_bar(t), s.sqrt_one_minus_alpha_bar(t));
            for i in 0..x0.len() {
                prop_assert!((a * xt[i] - b * v[i] - x0[i]).abs() < 1e-6);
                prop_assert!((b * xt[i] + a * v[i] - eps[i]).abs() < 1e-6);
            }
        }
    }
}
