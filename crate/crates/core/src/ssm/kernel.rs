//! Diagonal SSM kernel and its reverse-mode derivative.
//!
//! All arithmetic is `f64` regardless of the model precision; kernels are
//! cast once materialised.

use num_complex::Complex64;

/// Borrowed view of one diagonal SSM.
#[derive(Debug, Clone, Copy)]
pub struct Poles<'a> {
    /// `Re A = -exp(rho)`.
    pub rho: &'a [f64],
    pub a_imag: &'a [f64],
    pub b: &'a [Complex64],
    pub c: &'a [Complex64],
    /// Effective step size.
    pub dt: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoleGrads {
    pub rho: Vec<f64>,
    pub c_re: Vec<f64>,
    pub c_im: Vec<f64>,
    /// Derivative with respect to the effective step size.
    pub dt: f64,
}

impl Poles<'_> {
    pub fn state_dim(&self) -> usize {
        self.rho.len()
    }

    pub fn a(&self, i: usize) -> Complex64 {
        Complex64::new(-self.rho[i].exp(), self.a_imag[i])
    }

    /// Zero-order hold: `Ā = exp(ΔA)`, `B̄ = (Ā - 1)/A · B`.
    pub fn discretize(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        (0..self.state_dim())
            .map(|i| {
                let a = self.a(i);
                let z = (a * self.dt).exp();
                (z, (z - 1.0) / a * self.b[i])
            })
            .unzip()
    }

    /// `K[j] = Re Σ_i C_i Ā_i^j B̄_i`.
    pub fn kernel(&self, len: usize) -> Vec<f64> {
        let (z, bbar) = self.discretize();
        let mut k = vec![0.0; len];
        for i in 0..self.state_dim() {
            let mut p = self.c[i] * bbar[i];
            let zi = z[i];
            for kj in k.iter_mut() {
                *kj += p.re;
                p *= zi;
            }
        }
        k
    }

    /// Pulls `dK = ∂L/∂K` back onto `(rho, C, Δ)`.
    pub fn kernel_backward(&self, dk: &[f64]) -> PoleGrads {
        let n = self.state_dim();
        let (z, bbar) = self.discretize();
        let mut g = PoleGrads { rho: vec![0.0; n], c_re: vec![0.0; n], c_im: vec![0.0; n], dt: 0.0 };
        for i in 0..n {
            let (zi, a) = (z[i], self.a(i));
            let w = self.c[i] * bbar[i];
            // γ_W = Σ dK_j z^j and Σ dK_j j z^{j-1}.
            let mut gw = Complex64::new(0.0, 0.0);
            let mut gdz = Complex64::new(0.0, 0.0);
            let mut p = Complex64::new(1.0, 0.0);
            let mut p_prev = Complex64::new(0.0, 0.0);
            for (j, &d) in dk.iter().enumerate() {
                gw += p * d;
                gdz += p_prev * (d * j as f64);
                p_prev = p;
                p *= zi;
            }
            let gz = w * gdz;
            let gc = gw * bbar[i];
            let gbbar = gw * self.c[i];
            let b = self.b[i];
            let ga = gz * self.dt * zi + gbbar * b * (a * zi * self.dt - (zi - 1.0)) / (a * a);
            g.dt += (gz * a * zi + gbbar * b * zi).re;
            g.rho[i] = (ga * (-self.rho[i].exp())).re;
            g.c_re[i] = gc.re;
            g.c_im[i] = -gc.im;
        }
        g
    }
}
