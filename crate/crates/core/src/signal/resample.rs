use super::SegmentBatch;
use crate::error::{ensure, Result};

/// Output length for a rate change, `round(L · new / old)`.
pub fn resampled_len(len: usize, old_rate: f64, new_rate: f64) -> usize {
    (len as f64 * new_rate / old_rate).round() as usize
}

/// Linear-interpolation resampling of one channel.
///
/// Output sample `k` sits at time `k / new_rate`; samples past the last
/// input instant hold the final value.
pub fn resample_linear(x: &[f32], old_rate: f64, new_rate: f64) -> Result<Vec<f32>> {
    ensure!(old_rate > 0.0 && new_rate > 0.0, InvalidArgument, "sampling rates must be positive");
    let out_len = resampled_len(x.len(), old_rate, new_rate);
    ensure!(out_len >= 2, InvalidArgument, "resampling {} samples to {new_rate} Hz leaves {out_len}", x.len());
    if old_rate == new_rate {
        return Ok(x.to_vec());
    }
    let step = old_rate / new_rate;
    let last = x.len() - 1;
    Ok((0..out_len)
        .map(|k| {
            let pos = k as f64 * step;
            let i = pos.floor() as usize;
            if i >= last {
                return x[last];
            }
            let frac = pos - i as f64;
            ((1.0 - frac) * x[i] as f64 + frac * x[i + 1] as f64) as f32
        })
        .collect())
}

pub fn resample(batch: &SegmentBatch, new_rate: f64) -> Result<SegmentBatch> {
    ensure!(new_rate > 0.0, InvalidArgument, "target rate must be positive");
    let new_len = resampled_len(batch.samples, batch.sample_rate, new_rate);
    ensure!(new_len >= 2, InvalidArgument, "resampling to {new_rate} Hz leaves {new_len} samples");
    let mut signals = Vec::with_capacity(batch.len() * batch.channels * new_len);
    for i in 0..batch.len() {
        for c in 0..batch.channels {
            signals.extend(resample_linear(batch.row(i, c), batch.sample_rate, new_rate)?);
        }
    }
    SegmentBatch::new(signals, batch.channels, new_len, batch.labels.clone(), new_rate, batch.channel_ids.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f32> {
        (0..n).map(|k| (2.0 * PI * freq * k as f64 / rate).sin() as f32).collect()
    }

    fn correlation(a: &[f32], b: &[f32]) -> f64 {
        let n = a.len().min(b.len());
        let (ma, mb) = (
            a[..n].iter().map(|&v| v as f64).sum::<f64>() / n as f64,
            b[..n].iter().map(|&v| v as f64).sum::<f64>() / n as f64,
        );
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for k in 0..n {
            let (x, y) = (a[k] as f64 - ma, b[k] as f64 - mb);
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn same_rate_is_identity() {
        let x = sine(5.0, 200.0, 1000);
        assert_eq!(resample_linear(&x, 200.0, 200.0).unwrap(), x);
    }

    #[test]
    fn halving_rate_halves_length() {
        let b = SegmentBatch::new(vec![0.0; 1000], 1, 1000, vec![0], 200.0, vec![0]).unwrap();
        let r = resample(&b, 100.0).unwrap();
        assert_eq!(r.samples, 500);
        assert_eq!(r.sample_rate, 100.0);
    }

    #[test]
    fn five_hz_sine_to_190_hz_matches_closed_form() {
        let x = sine(5.0, 200.0, 1000);
        let y = resample_linear(&x, 200.0, 190.0).unwrap();
        assert_eq!(y.len(), 950);
        let want = sine(5.0, 190.0, 950);
        assert!(correlation(&y, &want) > 0.999);
    }

    #[test]
    fn too_short_output_is_rejected() {
        assert!(resample_linear(&[1.0, 2.0, 3.0], 200.0, 10.0).is_err());
    }
}
