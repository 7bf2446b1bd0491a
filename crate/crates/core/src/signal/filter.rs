//! Causal IIR filtering with cascaded biquads.
//!
//! Sections follow the bilinear-transform "cookbook" forms; with the
//! Butterworth section Qs the cascade is a prewarped digital Butterworth
//! filter.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Second-order section normalised to `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn normalised(b: [f64; 3], a: [f64; 3]) -> Self {
        Self { b0: b[0] / a[0], b1: b[1] / a[0], b2: b[2] / a[0], a1: a[1] / a[0], a2: a[2] / a[0] }
    }

    fn prelude(fs: f64, f0: f64, q: f64) -> (f64, f64) {
        let w0 = 2.0 * PI * f0 / fs;
        (w0.cos(), w0.sin() / (2.0 * q))
    }

    pub fn lowpass(fs: f64, f0: f64, q: f64) -> Self {
        let (cw, alpha) = Self::prelude(fs, f0, q);
        Self::normalised(
            [(1.0 - cw) / 2.0, 1.0 - cw, (1.0 - cw) / 2.0],
            [1.0 + alpha, -2.0 * cw, 1.0 - alpha],
        )
    }

    pub fn highpass(fs: f64, f0: f64, q: f64) -> Self {
        let (cw, alpha) = Self::prelude(fs, f0, q);
        Self::normalised(
            [(1.0 + cw) / 2.0, -(1.0 + cw), (1.0 + cw) / 2.0],
            [1.0 + alpha, -2.0 * cw, 1.0 - alpha],
        )
    }

    pub fn notch(fs: f64, f0: f64, q: f64) -> Self {
        let (cw, alpha) = Self::prelude(fs, f0, q);
        Self::normalised([1.0, -2.0 * cw, 1.0], [1.0 + alpha, -2.0 * cw, 1.0 - alpha])
    }

    /// `|H(e^{jω})|` at frequency `f`.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        let num_re = self.b0 + self.b1 * c1 + self.b2 * c2;
        let num_im = -(self.b1 * s1 + self.b2 * s2);
        let den_re = 1.0 + self.a1 * c1 + self.a2 * c2;
        let den_im = -(self.a1 * s1 + self.a2 * s2);
        (num_re.hypot(num_im)) / (den_re.hypot(den_im))
    }
}

/// Butterworth section quality factors for an even `order`.
pub fn butterworth_qs(order: usize) -> Vec<f64> {
    (1..=order / 2)
        .map(|k| 1.0 / (2.0 * ((2 * k - 1) as f64 * PI / (2 * order) as f64).cos()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
}

impl BiquadCascade {
    pub fn butterworth_lowpass(order: usize, fs: f64, fc: f64) -> Self {
        Self { sections: butterworth_qs(order).into_iter().map(|q| Biquad::lowpass(fs, fc, q)).collect() }
    }

    pub fn butterworth_highpass(order: usize, fs: f64, fc: f64) -> Self {
        Self { sections: butterworth_qs(order).into_iter().map(|q| Biquad::highpass(fs, fc, q)).collect() }
    }

    pub fn then(mut self, other: BiquadCascade) -> Self {
        self.sections.extend(other.sections);
        self
    }

    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        self.sections.iter().map(|s| s.magnitude(f, fs)).product()
    }

    /// Forward-only (causal) filtering from a zero initial state,
    /// transposed direct form II.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b0 * input + z1;
                z1 = s.b1 * input - s.a1 * out + z2;
                z2 = s.b2 * input - s.a2 * out;
                *v = out;
            }
        }
        y
    }
}

/// Band-pass plus notch front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub highpass_hz: f64,
    pub highpass_order: usize,
    pub lowpass_hz: f64,
    pub lowpass_order: usize,
    pub notch_hz: Option<f64>,
    pub notch_q: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            highpass_hz: 0.1,
            highpass_order: 4,
            lowpass_hz: 75.0,
            lowpass_order: 8,
            notch_hz: Some(50.0),
            notch_q: 30.0,
        }
    }
}

impl FilterConfig {
    /// Builds the cascade for sampling rate `fs`. Stages whose corner lies
    /// at or above Nyquist are omitted since the signal holds no content
    /// there.
    pub fn design(&self, fs: f64) -> Result<BiquadCascade> {
        ensure!(fs > 0.0, InvalidArgument, "sampling rate must be positive, got {fs}");
        ensure!(
            self.highpass_order % 2 == 0 && self.lowpass_order % 2 == 0,
            Config,
            "filter orders must be even"
        );
        let nyquist = fs / 2.0;
        ensure!(
            self.highpass_hz > 0.0 && self.highpass_hz < nyquist,
            Config,
            "high-pass corner {} Hz outside (0, {nyquist}) Hz",
            self.highpass_hz
        );
        let mut cascade = BiquadCascade::butterworth_highpass(self.highpass_order, fs, self.highpass_hz);
        if self.lowpass_hz < nyquist {
            cascade = cascade.then(BiquadCascade::butterworth_lowpass(self.lowpass_order, fs, self.lowpass_hz));
        }
        if let Some(f0) = self.notch_hz.filter(|&f| f < nyquist) {
            cascade.sections.push(Biquad::notch(fs, f0, self.notch_q));
        }
        Ok(cascade)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn fourth_order_qs() {
        let qs = butterworth_qs(4);
        assert!((qs[0] - 0.541196).abs() < 1e-6);
        assert!((qs[1] - 1.306563).abs() < 1e-6);
    }

    #[test]
    fn butterworth_is_3db_at_corner() {
        let lp = BiquadCascade::butterworth_lowpass(8, 500.0, 75.0);
        assert!((lp.magnitude(75.0, 500.0) - 0.5f64.sqrt()).abs() < 1e-9);
        let hp = BiquadCascade::butterworth_highpass(4, 200.0, 0.1);
        assert!((hp.magnitude(0.1, 200.0) - 0.5f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn hundred_hz_sine_is_attenuated_beyond_20db() {
        let fs = 500.0;
        let cascade = FilterConfig::default().design(fs).unwrap();
        let response_db = 20.0 * cascade.magnitude(100.0, fs).log10();
        assert!(response_db < -20.0, "{response_db} dB");

        // Measured on a filtered tone after the start-up transient.
        let x: Vec<f64> = (0..5000).map(|n| (2.0 * PI * 100.0 * n as f64 / fs).sin()).collect();
        let y = cascade.apply(&x);
        let measured_db = 20.0 * (rms(&y[2500..]) / rms(&x[2500..])).log10();
        assert!(measured_db < -20.0, "{measured_db} dB");
    }

    #[test]
    fn passband_is_nearly_flat() {
        let cascade = FilterConfig::default().design(200.0).unwrap();
        for f in [2.0, 10.0, 20.0, 35.0] {
            let g = cascade.magnitude(f, 200.0);
            assert!((g - 1.0).abs() < 0.05, "gain {g} at {f} Hz");
        }
        assert!(cascade.magnitude(50.0, 200.0) < 1e-6);
    }

    #[test]
    fn dc_offset_decays() {
        let fs = 200.0;
        let cascade = FilterConfig::default().design(fs).unwrap();
        let y = cascade.apply(&vec![1.0; 200 * 120]);
        let tail = &y[y.len() - 2000..];
        assert!(tail.iter().all(|v| v.abs() < 0.01), "{}", tail[0]);
    }

    #[test]
    fn stages_above_nyquist_are_dropped() {
        let c = FilterConfig::default().design(90.0).unwrap();
        assert_eq!(c.sections.len(), 2);
        assert!(FilterConfig::default().design(0.0).is_err());
    }
}
