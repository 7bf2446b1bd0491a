use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::{Float, Param};

/// Decoupled-weight-decay Adam. Moments are kept in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        ensure!((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2), Config, "betas must lie in [0, 1)");
        ensure!(eps > 0.0 && weight_decay >= 0.0, Config, "eps must be positive and weight decay non-negative");
        Ok(Self { beta1, beta2, eps, weight_decay, step: 0, m: Vec::new(), v: Vec::new() })
    }

    /// One update of every trainable parameter. Fails without touching any
    /// parameter when a gradient is non-finite.
    pub fn update<F: Float>(&mut self, params: &mut [&mut Param<F>], lr: f64) -> Result<()> {
        for p in params.iter() {
            if p.trainable && !p.grad.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in {}", p.name)));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        ensure!(self.m.len() == params.len(), Shape, "optimizer state covers {} tensors, got {}", self.m.len(), params.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let decay = p.decay && self.weight_decay > 0.0;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grads: Vec<f64> = p.grad.data().iter().map(|g| g.f64()).collect();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let mut theta = w.f64();
                if decay {
                    theta -= lr * self.weight_decay * theta;
                }
                let g = grads[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                theta -= lr * mh / (vh.sqrt() + self.eps);
                *w = F::of(theta);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `threshold`.
/// Returns the norm before clipping.
pub fn clip_by_global_norm<F: Float>(params: &mut [&mut Param<F>], threshold: f64) -> f64 {
    let norm = params.iter().filter(|p| p.trainable).map(|p| p.grad.sq_norm()).sum::<f64>().sqrt();
    if norm > threshold {
        let s = F::of(threshold / norm);
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Exponential moving average of parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ema {
    pub decay: f64,
    /// Ramp the decay as `min(decay, (1+n)/(10+n))`.
    pub warmup: bool,
    pub updates: u64,
    pub shadow: Vec<Vec<f64>>,
}

impl Ema {
    pub fn new<F: Float>(params: &[&Param<F>], decay: f64, warmup: bool) -> Self {
        Self { decay, warmup, updates: 0, shadow: params.iter().map(|p| p.value.data().iter().map(|v| v.f64()).collect()).collect() }
    }

    pub fn current_decay(&self) -> f64 {
        if self.warmup {
            let n = self.updates as f64;
            self.decay.min((1.0 + n) / (10.0 + n))
        } else {
            self.decay
        }
    }

    pub fn update<F: Float>(&mut self, params: &[&Param<F>]) {
        let d = self.current_decay();
        for (s, p) in self.shadow.iter_mut().zip(params) {
            for (e, &v) in s.iter_mut().zip(p.value.data()) {
                *e = d * *e + (1.0 - d) * v.f64();
            }
        }
        self.updates += 1;
    }

    pub fn values<F: Float>(&self) -> Vec<Vec<F>> {
        self.shadow.iter().map(|s| s.iter().map(|&v| F::of(v)).collect()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Param<f64> {
        Param::new("w", Tensor::from_vec(&[1], vec![v]).unwrap())
    }

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut p = scalar(0.7);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0).unwrap();
        opt.update(&mut [&mut p], 1e-3).unwrap();
        assert_eq!(p.value.data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.5);
        p.grad.fill(1.0);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0).unwrap();
        opt.update(&mut [&mut p], 1e-3).unwrap();
        assert!((0.5 - p.value.data()[0] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn decay_shrinks_towards_zero() {
        let mut p = scalar(2.0);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.1).unwrap();
        opt.update(&mut [&mut p], 0.01).unwrap();
        assert!((p.value.data()[0] - (2.0 - 0.01 * 0.1 * 2.0)).abs() < 1e-15);
        let mut b = Param::no_decay("b", Tensor::from_vec(&[1], vec![2.0]).unwrap());
        opt.update(&mut [&mut b], 0.01).unwrap();
        assert_eq!(b.value.data()[0], 2.0);
    }

    #[test]
    fn nan_gradient_aborts_the_step() {
        let mut p = scalar(1.0);
        p.grad.fill(f64::NAN);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0).unwrap();
        assert!(matches!(opt.update(&mut [&mut p], 1e-3), Err(Error::Numeric(_))));
        assert_eq!(p.value.data()[0], 1.0);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn without_decay_matches_plain_adam() {
        let grads = [0.3, -1.2, 0.05, 2.0, -0.4];
        let mut p = scalar(1.0);
        let mut opt = AdamW::new(0.9, 0.98, 1e-8, 0.0).unwrap();
        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            p.grad.fill(g);
            opt.update(&mut [&mut p], 1e-2).unwrap();
            m = 0.9 * m + (1.0 - 0.9) * g;
            v = 0.98 * v + (1.0 - 0.98) * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.98f64.powi(t as i32 + 1));
            theta -= 1e-2 * mh / (vh.sqrt() + 1e-8);
            assert_eq!(p.value.data()[0].to_bits(), theta.to_bits());
        }
    }

    #[test]
    fn clipping() {
        let mut p: Param<f64> = Param::new("g", Tensor::zeros(&[2]));
        p.grad.data_mut().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(clip_by_global_norm(&mut [&mut p], 1.0), 5.0);
        assert!((p.grad.data()[0] - 0.6).abs() < 1e-15 && (p.grad.data()[1] - 0.8).abs() < 1e-15);
        let mut q: Param<f64> = Param::new("g", Tensor::zeros(&[1]));
        q.grad.fill(0.5);
        clip_by_global_norm(&mut [&mut q], 1.0);
        assert_eq!(q.grad.data()[0], 0.5);
    }

    #[test]
    fn ema_closed_forms() {
        let mut p = scalar(0.0);
        let mut ema = Ema::new(&[&p], 0.999, false);
        p.value.fill(1.0);
        ema.update(&[&p]);
        assert!((ema.shadow[0][0] - 0.001).abs() < 1e-15);
        ema.update(&[&p]);
        ema.update(&[&p]);
        assert!((ema.shadow[0][0] - (1.0 - 0.999f64.powi(3))).abs() < 1e-15);
        let before = 1.0 - ema.shadow[0][0];
        ema.update(&[&p]);
        assert!(((1.0 - ema.shadow[0][0]) / before - 0.999).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn clipped_norm_is_bounded(g in prop::collection::vec(-100.0f64..100.0, 1..20), t in 0.01f64..10.0) {
            let mut p: Param<f64> = Param::new("g", Tensor::zeros(&[g.len()]));
            p.grad.data_mut().copy_from_slice(&g);
            clip_by_global_norm(&mut [&mut p], t);
            prop_assert!(p.grad.sq_norm().sqrt() <= t + 1e-6);
        }

        #[test]
        fn ema_stays_in_hull(vals in prop::collection::vec(-3.0f64..3.0, 1..50), warm in any::<bool>()) {
            let mut p = scalar(vals[0]);
            let mut ema = Ema::new(&[&p], 0.9, warm);
            let (mut lo, mut hi) = (vals[0], vals[0]);
            for &v in &vals {
                p.value.fill(v);
                lo = lo.min(v);
                hi = hi.max(v);
                ema.update(&[&p]);
                let e = ema.shadow[0][0];
                prop_assert!(e >= lo - 1e-12 && e <= hi + 1e-12);
            }
        }
    }
}
