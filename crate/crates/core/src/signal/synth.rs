//! Synthetic labelled recordings with class-specific spectral structure.
//!
//! Output is in raw microvolt-like units at the requested rate, so it passes
//! through the same preprocessing chain as recorded data.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Split, SplitEntry};
use super::{write_segment, SegmentFile};
use crate::error::{ensure, Result};
use crate::numerics::rng::{child, normal};

/// Class-defining component added on top of the shared background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassRecipe {
    /// Sinusoid at `freq_hz ± jitter_hz` with random phase per channel.
    Oscillation { freq_hz: f64, amplitude: f64, jitter_hz: f64 },
    /// Gaussian-shaped transients arriving as a Poisson process.
    SpikeTrain { rate_hz: f64, amplitude: f64, width_s: f64 },
    /// Extra white noise.
    Broadband { amplitude: f64 },
}

impl ClassRecipe {
    pub fn band(freq_hz: f64) -> Self {
        ClassRecipe::Oscillation { freq_hz, amplitude: 80.0, jitter_hz: 0.3 }
    }

    pub fn name(&self) -> String {
        match self {
            ClassRecipe::Oscillation { freq_hz, .. } => format!("osc_{freq_hz}hz"),
            ClassRecipe::SpikeTrain { rate_hz, .. } => format!("spikes_{rate_hz}hz"),
            ClassRecipe::Broadband { .. } => "broadband".into(),
        }
    }

    fn render<R: Rng>(&self, rate: f64, out: &mut [f64], rng: &mut R) {
        match *self {
            ClassRecipe::Oscillation { freq_hz, amplitude, jitter_hz } => {
                let f = freq_hz + jitter_hz * rng.random_range(-1.0..=1.0);
                let a = amplitude * rng.random_range(0.7..1.3);
                let phase = rng.random_range(0.0..2.0 * PI);
                for (k, v) in out.iter_mut().enumerate() {
                    *v += a * (2.0 * PI * f * k as f64 / rate + phase).sin();
                }
            }
            ClassRecipe::SpikeTrain { rate_hz, amplitude, width_s } => {
                let duration = out.len() as f64 / rate;
                let mut t = -rng.random::<f64>().max(1e-12).ln() / rate_hz;
                let sigma = width_s * rate;
                while t < duration {
                    let centre = t * rate;
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let a = sign * amplitude * rng.random_range(0.7..1.3);
                    let lo = (centre - 4.0 * sigma).max(0.0) as usize;
                    let hi = ((centre + 4.0 * sigma) as usize + 1).min(out.len());
                    for (k, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
                        let d = (k as f64 - centre) / sigma;
                        *v += a * (-0.5 * d * d).exp();
                    }
                    t += -rng.random::<f64>().max(1e-12).ln() / rate_hz;
                }
            }
            ClassRecipe::Broadband { amplitude } => {
                for v in out.iter_mut() {
                    *v += amplitude * normal::<f64, _>(rng);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub recipes: Vec<ClassRecipe>,
    /// Segments per class in the train/valid pool.
    pub n_per_class: Vec<usize>,
    pub test_per_class: Vec<usize>,
    pub valid_fraction: f64,
    pub channels: usize,
    pub samples: usize,
    pub rate: f64,
    /// Innovation std and pole of the AR(1) background.
    pub background_std: f64,
    pub background_pole: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            recipes: vec![ClassRecipe::band(4.0), ClassRecipe::band(10.0), ClassRecipe::band(20.0)],
            n_per_class: vec![100; 3],
            test_per_class: vec![20; 3],
            valid_fraction: 0.2,
            channels: 4,
            samples: 1000,
            rate: 200.0,
            background_std: 4.0,
            background_pole: 0.9,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.recipes.len();
        ensure!(k > 0, InvalidArgument, "synthetic dataset needs at least one class recipe");
        ensure!(k >= 2, InvalidArgument, "synthetic dataset needs at least two classes, got {k}");
        ensure!(
            self.n_per_class.len() == k && self.test_per_class.len() == k,
            Config,
            "per-class counts must list {k} entries"
        );
        ensure!(self.channels > 0 && self.samples >= 2, Config, "segments need channels and at least two samples");
        ensure!(self.rate > 0.0, Config, "rate must be positive");
        ensure!((0.0..1.0).contains(&self.valid_fraction), Config, "valid fraction must lie in [0, 1)");
        ensure!((0.0..1.0).contains(&self.background_pole), Config, "background pole must lie in [0, 1)");
        Ok(())
    }

    /// Renders one segment (channel-major) deterministically from its address.
    pub fn render(&self, split: Split, class: usize, index: usize) -> Vec<f32> {
        let mut rng = child(self.seed, &[split as u64, class as u64, index as u64]);
        let l = self.samples;
        let mut out = Vec::with_capacity(self.channels * l);
        let mut row = vec![0.0f64; l];
        let gain = (1.0 - self.background_pole * self.background_pole).sqrt().recip();
        for _ in 0..self.channels {
            let mut state = normal::<f64, _>(&mut rng) * self.background_std * gain;
            for v in row.iter_mut() {
                state = self.background_pole * state + self.background_std * normal::<f64, _>(&mut rng);
                *v = state;
            }
            self.recipes[class].render(self.rate, &mut row, &mut rng);
            out.extend(row.iter().map(|&v| v as f32));
        }
        out
    }
}

/// Writes the dataset under `dir` and returns its manifest (also saved).
///
/// The train/valid split is stratified: the first `1 - valid_fraction` of each
/// class's pool goes to train.
pub fn synth_dataset(spec: &SynthSpec, dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut splits: BTreeMap<Split, Vec<SplitEntry>> = Split::ALL.iter().map(|&s| (s, Vec::new())).collect();
    for s in Split::ALL {
        fs::create_dir_all(dir.join(s.name()))?;
    }
    for class in 0..spec.recipes.len() {
        let n = spec.n_per_class[class];
        let n_train = n - (n as f64 * spec.valid_fraction).round() as usize;
        let mut emit = |split: Split, index: usize| -> Result<()> {
            let rel = format!("{}/c{class}_{index:05}.seg", split.name());
            let data = spec.render(split, class, index);
            let seg = SegmentFile::new(spec.channels, spec.samples, spec.rate, class, data)?;
            write_segment(&dir.join(&rel), &seg)?;
            splits.get_mut(&split).expect("all splits present").push(SplitEntry { path: rel, label: class });
            Ok(())
        };
        for i in 0..n {
            emit(if i < n_train { Split::Train } else { Split::Valid }, i)?;
        }
        for i in 0..spec.test_per_class[class] {
            emit(Split::Test, i)?;
        }
    }
    let manifest = DatasetManifest {
        num_classes: spec.recipes.len(),
        class_names: spec.recipes.iter().map(ClassRecipe::name).collect(),
        channels: spec.channels,
        samples: spec.samples,
        rate: spec.rate,
        seed: spec.seed,
        splits,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::read_segment;

    fn periodogram_peak(x: &[f32], rate: f64) -> f64 {
        let n = x.len();
        let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let mut best = (0.0, 0.0);
        for bin in 1..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (k, &v) in x.iter().enumerate() {
                let w = 2.0 * PI * (bin * k) as f64 / n as f64;
                re += (v as f64 - mean) * w.cos();
                im -= (v as f64 - mean) * w.sin();
            }
            let p = re * re + im * im;
            if p > best.1 {
                best = (bin as f64 * rate / n as f64, p);
            }
        }
        best.0
    }

    fn band_power(x: &[f32], rate: f64, lo: f64, hi: f64) -> f64 {
        let n = x.len();
        let mut total = 0.0;
        let (b0, b1) = ((lo * n as f64 / rate).ceil() as usize, (hi * n as f64 / rate).floor() as usize);
        for bin in b0..=b1 {
            let (mut re, mut im) = (0.0, 0.0);
            for (k, &v) in x.iter().enumerate() {
                let w = 2.0 * PI * (bin * k) as f64 / n as f64;
                re += v as f64 * w.cos();
                im -= v as f64 * w.sin();
            }
            total += re * re + im * im;
        }
        total
    }

    fn small_spec(n: usize) -> SynthSpec {
        SynthSpec { n_per_class: vec![n; 3], test_per_class: vec![2; 3], samples: 400, channels: 2, ..Default::default() }
    }

    #[test]
    fn default_histogram_and_file_count() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(&SynthSpec { test_per_class: vec![0; 3], ..Default::default() }, dir.path()).unwrap();
        let total: usize = Split::ALL.iter().map(|&s| m.entries(s).len()).sum();
        assert_eq!(total, 300);
        let counts: Vec<usize> =
            (0..3).map(|c| m.histogram(Split::Train)[c] + m.histogram(Split::Valid)[c]).collect();
        assert_eq!(counts, vec![100, 100, 100]);
        assert_eq!(m.histogram(Split::Train), vec![80, 80, 80]);
        let seg = read_segment(&dir.path().join(&m.entries(Split::Train)[0].path)).unwrap();
        assert_eq!((seg.header.channels, seg.header.samples), (4, 1000));
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = small_spec(3);
        let m = synth_dataset(&spec, a.path()).unwrap();
        synth_dataset(&spec, b.path()).unwrap();
        for s in Split::ALL {
            for e in m.entries(s) {
                assert_eq!(fs::read(a.path().join(&e.path)).unwrap(), fs::read(b.path().join(&e.path)).unwrap());
            }
        }
        assert_eq!(fs::read(a.path().join("manifest.json")).unwrap(), fs::read(b.path().join("manifest.json")).unwrap());
    }

    #[test]
    fn ten_hz_class_peaks_at_ten_hz() {
        let spec = SynthSpec::default();
        for i in 0..50 {
            let x = spec.render(Split::Train, 1, i);
            for c in 0..spec.channels {
                let row = &x[c * spec.samples..(c + 1) * spec.samples];
                let f = periodogram_peak(row, spec.rate);
                assert!((f - 10.0).abs() <= 0.6, "segment {i} channel {c} peaks at {f} Hz");
            }
        }
    }

    #[test]
    fn band_power_classifier_separates_classes() {
        let spec = SynthSpec { samples: 1000, ..Default::default() };
        let bands = [(2.0, 6.0), (8.0, 12.0), (17.0, 23.0)];
        let (mut correct, mut total) = (0, 0);
        for class in 0..3 {
            for i in 0..40 {
                let x = spec.render(Split::Test, class, i);
                let row = &x[..spec.samples];
                let powers: Vec<f64> = bands.iter().map(|&(lo, hi)| band_power(row, spec.rate, lo, hi)).collect();
                let pred = (0..3).max_by(|&a, &b| powers[a].total_cmp(&powers[b])).unwrap();
                correct += (pred == class) as usize;
                total += 1;
            }
        }
        assert!(correct as f64 / total as f64 > 0.95, "{correct}/{total}");
    }

    #[test]
    fn imbalanced_counts_follow_spec() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            recipes: vec![ClassRecipe::band(4.0), ClassRecipe::SpikeTrain { rate_hz: 2.0, amplitude: 150.0, width_s: 0.02 }],
            n_per_class: vec![20, 2],
            test_per_class: vec![0, 0],
            samples: 200,
            ..Default::default()
        };
        let m = synth_dataset(&spec, dir.path()).unwrap();
        let h: Vec<usize> = (0..2).map(|c| m.histogram(Split::Train)[c] + m.histogram(Split::Valid)[c]).collect();
        assert_eq!(h, vec![20, 2]);
    }

    #[test]
    fn fewer_than_two_classes_is_rejected() {
        let spec = SynthSpec { recipes: vec![], n_per_class: vec![], test_per_class: vec![], ..Default::default() };
        assert!(spec.validate().is_err());
        let spec = SynthSpec { recipes: vec![ClassRecipe::band(4.0)], n_per_class: vec![1], test_per_class: vec![1], ..Default::default() };
        assert!(spec.validate().is_err());
    }
}
