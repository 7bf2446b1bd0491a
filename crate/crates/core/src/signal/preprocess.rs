use serde::{Deserialize, Serialize};

use super::{compand_in_place, resample_linear, FilterConfig, SegmentBatch};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub filter: Option<FilterConfig>,
    pub target_rate: f64,
    /// Raw amplitudes are divided by this before companding.
    pub scale: f64,
    pub window_secs: f64,
    pub compand: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { filter: Some(FilterConfig::default()), target_rate: 200.0, scale: 100.0, window_secs: 5.0, compand: true }
    }
}

impl PreprocessConfig {
    pub fn window_len(&self) -> usize {
        (self.window_secs * self.target_rate).round() as usize
    }
}

/// Filter → resample → scale → segment → compand.
///
/// `raw` holds `channels` rows of equal length, channel-major. Trailing
/// samples that do not fill a whole window are dropped.
pub fn preprocess(raw: &[f32], channels: usize, raw_rate: f64, label: usize, cfg: &PreprocessConfig) -> Result<SegmentBatch> {
    ensure!(raw_rate > 0.0, InvalidArgument, "raw sampling rate must be positive");
    ensure!(channels > 0 && raw.len() % channels == 0, Shape, "{} samples do not split into {channels} channels", raw.len());
    let n = raw.len() / channels;
    let cascade = cfg.filter.as_ref().map(|f| f.design(raw_rate)).transpose()?;
    let inv_scale = 1.0 / cfg.scale;

    let mut rows = Vec::with_capacity(channels);
    for row in raw.chunks_exact(n) {
        let filtered: Vec<f32> = match &cascade {
            Some(c) => {
                let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                c.apply(&x).into_iter().map(|v| v as f32).collect()
            }
            None => row.to_vec(),
        };
        let mut r = resample_linear(&filtered, raw_rate, cfg.target_rate)?;
        r.iter_mut().for_each(|v| *v = (*v as f64 * inv_scale) as f32);
        rows.push(r);
    }

    let window = cfg.window_len();
    let len = rows[0].len();
    ensure!(window >= 1, Config, "window of {} s at {} Hz is empty", cfg.window_secs, cfg.target_rate);
    ensure!(len >= window, InvalidArgument, "recording of {len} samples is shorter than the {window}-sample window");
    let n_windows = len / window;
    let mut batch = SegmentBatch::empty(channels, window, cfg.target_rate);
    let mut seg = vec![0.0f32; channels * window];
    for w in 0..n_windows {
        for (c, row) in rows.iter().enumerate() {
            seg[c * window..(c + 1) * window].copy_from_slice(&row[w * window..(w + 1) * window]);
        }
        if cfg.compand {
            compand_in_place(&mut seg)?;
        }
        batch.push(&seg, label)?;
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_seconds_at_200hz_is_one_1000_sample_window() {
        let raw = vec![0.0f32; 2 * 1000];
        let b = preprocess(&raw, 2, 200.0, 1, &PreprocessConfig::default()).unwrap();
        assert_eq!((b.len(), b.channels, b.samples), (1, 2, 1000));
        assert_eq!(b.labels, vec![1]);
    }

    #[test]
    fn longer_recordings_are_split_into_windows() {
        let raw = vec![0.0f32; 2600];
        let b = preprocess(&raw, 1, 200.0, 0, &PreprocessConfig::default()).unwrap();
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn short_recording_is_rejected() {
        assert!(preprocess(&[0.0; 500], 1, 200.0, 0, &PreprocessConfig::default()).is_err());
    }

    #[test]
    fn deterministic_and_scaled() {
        let raw: Vec<f32> = (0..1000).map(|k| 50.0 * (k as f32 * 0.3).sin()).collect();
        let cfg = PreprocessConfig { filter: None, compand: false, ..Default::default() };
        let a = preprocess(&raw, 1, 200.0, 0, &cfg).unwrap();
        let b = preprocess(&raw, 1, 200.0, 0, &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.signals[10] - raw[10] / 100.0).abs() < 1e-7);
    }

    #[test]
    fn large_amplitudes_are_companded() {
        let raw = vec![400.0f32; 1000];
        let cfg = PreprocessConfig { filter: None, ..Default::default() };
        let b = preprocess(&raw, 1, 200.0, 0, &cfg).unwrap();
        let want = super::super::mu_law_compand(4.0).unwrap() as f32;
        assert!((b.signals[0] - want).abs() < 1e-6);
    }

    #[test]
    fn resamples_to_target_rate() {
        let raw = vec![0.0f32; 1000];
        let cfg = PreprocessConfig { target_rate: 190.0, ..Default::default() };
        let b = preprocess(&raw, 1, 200.0, 0, &cfg).unwrap();
        assert_eq!((b.samples, b.sample_rate), (950, 190.0));
    }
}
