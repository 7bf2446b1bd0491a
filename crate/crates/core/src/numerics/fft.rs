//! Discrete Fourier transforms and FFT convolution.
//!
//! Complex values are `num_complex::Complex`, which is `#[repr(C)]` and thus
//! laid out as interleaved `(re, im)` pairs.

use std::sync::Arc;

use num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::FftPlanner;

use super::Float;
use crate::error::{ensure, Result};

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Zero-pads `signal` to `length` and returns its DFT.
pub fn fft_forward<F: Float>(signal: &[Complex<F>], length: usize) -> Result<Vec<Complex<F>>> {
    ensure!(!signal.is_empty(), InvalidArgument, "fft of an empty signal");
    ensure!(
        length >= signal.len(),
        InvalidArgument,
        "fft length {length} shorter than signal length {}",
        signal.len()
    );
    let mut buf = signal.to_vec();
    buf.resize(length, Complex::new(F::zero(), F::zero()));
    FftPlanner::new().plan_fft_forward(length).process(&mut buf);
    Ok(buf)
}

/// Inverse DFT, normalised so that `fft_inverse(fft_forward(x)) == x`.
pub fn fft_inverse<F: Float>(spectrum: &[Complex<F>]) -> Result<Vec<Complex<F>>> {
    ensure!(!spectrum.is_empty(), InvalidArgument, "inverse fft of an empty spectrum");
    let mut buf = spectrum.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    let scale = F::one() / F::of(buf.len() as f64);
    buf.iter_mut().for_each(|c| *c = *c * scale);
    Ok(buf)
}

/// Real-input FFT pair of a fixed padded length, shareable across threads.
#[derive(Clone)]
pub struct RealFft<F: Float> {
    len: usize,
    forward: Arc<dyn RealToComplex<F>>,
    inverse: Arc<dyn ComplexToReal<F>>,
}

impl<F: Float> RealFft<F> {
    pub fn new(len: usize) -> Self {
        let mut planner = RealFftPlanner::<F>::new();
        Self { len, forward: planner.plan_fft_forward(len), inverse: planner.plan_fft_inverse(len) }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spectrum_len(&self) -> usize {
        self.len / 2 + 1
    }

    pub fn workspace(&self) -> FftWorkspace<F> {
        FftWorkspace {
            time: vec![F::zero(); self.len],
            scratch_fwd: self.forward.make_scratch_vec(),
            scratch_inv: self.inverse.make_scratch_vec(),
        }
    }

    /// Zero-pads `x` and writes its half spectrum into `spec`.
    pub fn forward(&self, x: &[F], ws: &mut FftWorkspace<F>, spec: &mut [Complex<F>]) {
        debug_assert!(x.len() <= self.len);
        ws.time[..x.len()].copy_from_slice(x);
        ws.time[x.len()..].iter_mut().for_each(|v| *v = F::zero());
        self.forward
            .process_with_scratch(&mut ws.time, spec, &mut ws.scratch_fwd)
            .expect("buffer lengths are fixed by the plan");
    }

    /// Unnormalised inverse; the first `out.len()` samples (scaled by `scale`)
    /// are written to `out`. `spec` is clobbered.
    pub fn inverse(&self, spec: &mut [Complex<F>], ws: &mut FftWorkspace<F>, scale: F, out: &mut [F]) {
        // The DC and Nyquist bins of a real signal are real.
        spec[0].im = F::zero();
        if let Some(last) = spec.last_mut() {
            last.im = F::zero();
        }
        self.inverse
            .process_with_scratch(spec, &mut ws.time, &mut ws.scratch_inv)
            .expect("buffer lengths are fixed by the plan");
        for (o, &t) in out.iter_mut().zip(&ws.time) {
            *o = t * scale;
        }
    }
}

pub struct FftWorkspace<F> {
    time: Vec<F>,
    scratch_fwd: Vec<Complex<F>>,
    scratch_inv: Vec<Complex<F>>,
}

/// Causal linear convolution `y[k] = Σ_{j≤k} kernel[j] x[k-j]`, truncated to
/// `x.len()`, computed with an FFT of length `next_pow2(2L)`.
pub fn causal_conv<F: Float>(x: &[F], kernel: &[F]) -> Vec<F> {
    let l = x.len();
    if l == 0 {
        return Vec::new();
    }
    let n = next_pow2(2 * l);
    let fft = RealFft::<F>::new(n);
    let mut ws = fft.workspace();
    let mut xs = vec![Complex::new(F::zero(), F::zero()); fft.spectrum_len()];
    let mut ks = xs.clone();
    fft.forward(x, &mut ws, &mut xs);
    fft.forward(&kernel[..kernel.len().min(l)], &mut ws, &mut ks);
    for (a, b) in xs.iter_mut().zip(&ks) {
        *a = *a * *b;
    }
    let mut y = vec![F::zero(); l];
    fft.inverse(&mut xs, &mut ws, F::one() / F::of(n as f64), &mut y);
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex<f64> {
        Complex::new(re, 0.0)
    }

    #[test]
    fn impulse_transforms_to_ones() {
        let y = fft_forward(&[c(1.0), c(0.0), c(0.0), c(0.0)], 4).unwrap();
        for v in y {
            assert!((v - c(1.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_transforms_to_dc_spike() {
        let y = fft_forward(&[c(1.0); 4], 4).unwrap();
        assert!((y[0] - c(4.0)).norm() < 1e-15);
        for v in &y[1..] {
            assert!(v.norm() < 1e-15);
        }
    }

    #[test]
    fn round_trip_length_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Complex<f64>> =
            (0..8).map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let back = fft_inverse(&fft_forward(&x, 8).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn rejects_empty_and_short_lengths() {
        assert!(fft_forward::<f64>(&[], 4).is_err());
        assert!(fft_forward(&[c(1.0); 4], 2).is_err());
        assert!(fft_inverse::<f32>(&[]).is_err());
    }

    #[test]
    fn causal_conv_matches_direct_sum() {
        let x = [1.0, 2.0, -1.0, 0.5, 3.0];
        let k = [0.5, -0.25, 0.125, 0.0, 1.0];
        let y = causal_conv(&x, &k);
        for i in 0..x.len() {
            let want: f64 = (0..=i).map(|j| k[j] * x[i - j]).sum();
            assert!((y[i] - want).abs() < 1e-12);
        }
    }
}
