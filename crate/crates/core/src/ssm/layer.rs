use std::f64::consts::PI;

use num_complex::{Complex, Complex64};
use rand::Rng as _;

use super::kernel::{PoleGrads, Poles};
use crate::error::{ensure, Result};
use crate::numerics::fft::causal_conv;
use crate::numerics::rng::{normal, Rng};
use crate::Float;

pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 1e-1;

/// Products of rate ratios this close to one are snapped to exactly one, so
/// a retarget followed by its inverse restores the original step size.
const RATIO_SNAP: f64 = 1e-12;

/// One diagonal state-space layer with complex poles.
///
/// The kernel cache is keyed on length and cleared by every setter.
#[derive(Debug, Clone, PartialEq)]
pub struct S4dLayer {
    rho: Vec<f64>,
    a_imag: Vec<f64>,
    b: Vec<Complex64>,
    c: Vec<Complex64>,
    d: f64,
    log_dt: f64,
    rate_ratio: f64,
    cache: Option<(usize, Vec<f64>)>,
}

impl S4dLayer {
    /// `A_k = -½ + iπk`, `B_k = 1`, `C ~ CN(0, 1/N)`, `D = 1`,
    /// `Δ` log-uniform in `[1e-3, 1e-1]`.
    pub fn init_diag_lin(state_dim: usize, rng: &mut Rng) -> Result<Self> {
        ensure!(state_dim >= 1, InvalidArgument, "state dimension must be at least 1");
        let scale = (0.5 / state_dim as f64).sqrt();
        let c = (0..state_dim)
            .map(|_| Complex64::new(normal::<f64, _>(rng) * scale, normal::<f64, _>(rng) * scale))
            .collect();
        let log_dt = rng.random_range(DT_MIN.ln()..DT_MAX.ln());
        Ok(Self {
            rho: vec![0.5f64.ln(); state_dim],
            a_imag: (0..state_dim).map(|k| PI * k as f64).collect(),
            b: vec![Complex64::new(1.0, 0.0); state_dim],
            c,
            d: 1.0,
            log_dt,
            rate_ratio: 1.0,
            cache: None,
        })
    }

    /// Layer with explicit continuous-time parameters; `Re A` must be negative.
    pub fn from_parts(a: &[Complex64], b: &[Complex64], c: &[Complex64], d: f64, dt: f64) -> Result<Self> {
        let n = a.len();
        ensure!(n >= 1 && b.len() == n && c.len() == n, Shape, "A, B, C must share a non-zero length");
        ensure!(a.iter().all(|a| a.re < 0.0), InvalidArgument, "Re A must be negative");
        ensure!(dt > 0.0, InvalidArgument, "step size must be positive");
        Ok(Self {
            rho: a.iter().map(|a| (-a.re).ln()).collect(),
            a_imag: a.iter().map(|a| a.im).collect(),
            b: b.to_vec(),
            c: c.to_vec(),
            d,
            log_dt: dt.ln(),
            rate_ratio: 1.0,
            cache: None,
        })
    }

    pub fn poles(&self) -> Poles<'_> {
        Poles { rho: &self.rho, a_imag: &self.a_imag, b: &self.b, c: &self.c, dt: self.dt() }
    }

    pub fn state_dim(&self) -> usize {
        self.rho.len()
    }

    pub fn a(&self) -> Vec<Complex64> {
        let p = self.poles();
        (0..self.state_dim()).map(|i| p.a(i)).collect()
    }

    pub fn b(&self) -> &[Complex64] {
        &self.b
    }

    pub fn c(&self) -> &[Complex64] {
        &self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn log_dt(&self) -> f64 {
        self.log_dt
    }

    /// Effective step size `exp(log Δ) / rate_ratio`.
    pub fn dt(&self) -> f64 {
        self.log_dt.exp() / self.rate_ratio
    }

    pub fn rate_ratio(&self) -> f64 {
        self.rate_ratio
    }

    pub fn set_c(&mut self, c: &[Complex64]) -> Result<()> {
        ensure!(c.len() == self.state_dim(), Shape, "C must have {} entries", self.state_dim());
        self.c = c.to_vec();
        self.cache = None;
        Ok(())
    }

    pub fn set_rho(&mut self, rho: &[f64]) -> Result<()> {
        ensure!(rho.len() == self.state_dim(), Shape, "rho must have {} entries", self.state_dim());
        self.rho = rho.to_vec();
        self.cache = None;
        Ok(())
    }

    pub fn set_log_dt(&mut self, log_dt: f64) {
        self.log_dt = log_dt;
        self.cache = None;
    }

    pub fn set_d(&mut self, d: f64) {
        self.d = d;
    }

    pub fn discretize_zoh(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        self.poles().discretize()
    }

    pub fn materialize_kernel(&self, len: usize) -> Vec<f64> {
        self.poles().kernel(len)
    }

    /// Kernel of length `len`, computed once and reused until a parameter
    /// changes.
    pub fn kernel_cached(&mut self, len: usize) -> &[f64] {
        if self.cache.as_ref().is_none_or(|(l, _)| *l != len) {
            self.cache = Some((len, self.materialize_kernel(len)));
        }
        &self.cache.as_ref().expect("filled above").1
    }

    pub fn has_cached_kernel(&self) -> bool {
        self.cache.is_some()
    }

    pub fn kernel_backward(&self, dk: &[f64]) -> PoleGrads {
        self.poles().kernel_backward(dk)
    }

    /// Causal FFT convolution with the kernel plus the skip term.
    pub fn apply_conv<F: Float>(&self, x: &[F]) -> Vec<F> {
        let k: Vec<F> = self.materialize_kernel(x.len()).into_iter().map(F::of).collect();
        let d = F::of(self.d);
        causal_conv(x, &k).into_iter().zip(x).map(|(y, &xi)| y + d * xi).collect()
    }

    /// Step-by-step recurrence `h_k = Ā h_{k-1} + B̄ x_k`, `y_k = Re(C h_k) + D x_k`.
    pub fn apply_recurrent<F: Float>(&self, x: &[F]) -> Vec<F> {
        let (z, bbar) = self.discretize_zoh();
        let cast = |v: Complex64| Complex::new(F::of(v.re), F::of(v.im));
        let z: Vec<Complex<F>> = z.into_iter().map(cast).collect();
        let bbar: Vec<Complex<F>> = bbar.into_iter().map(cast).collect();
        let c: Vec<Complex<F>> = self.c.iter().map(|&v| cast(v)).collect();
        let d = F::of(self.d);
        let mut h = vec![Complex::new(F::zero(), F::zero()); self.state_dim()];
        x.iter()
            .map(|&xk| {
                let mut y = F::zero();
                for i in 0..h.len() {
                    h[i] = z[i] * h[i] + bbar[i] * xk;
                    y += (c[i] * h[i]).re;
                }
                y + d * xk
            })
            .collect()
    }

    /// Same layer with step size `Δ / ratio`, for input sampled at
    /// `ratio` times the original rate.
    pub fn retarget_rate(&self, ratio: f64) -> Result<Self> {
        ensure!(ratio > 0.0 && ratio.is_finite(), InvalidArgument, "rate ratio must be positive, got {ratio}");
        let mut out = self.clone();
        let r = self.rate_ratio * ratio;
        out.rate_ratio = if (r - 1.0).abs() < RATIO_SNAP { 1.0 } else { r };
        out.cache = None;
        Ok(out)
    }
}

/// `apply_conv(fwd, x) + reverse(apply_conv(bwd, reverse(x)))`.
pub fn bidirectional_apply<F: Float>(fwd: &S4dLayer, bwd: &S4dLayer, x: &[F]) -> Result<Vec<F>> {
    ensure!(fwd.state_dim() == bwd.state_dim(), Shape, "directions must share the state dimension");
    let mut rev: Vec<F> = x.iter().rev().copied().collect();
    rev = bwd.apply_conv(&rev);
    rev.reverse();
    Ok(fwd.apply_conv(x).into_iter().zip(rev).map(|(a, b)| a + b).collect())
}
