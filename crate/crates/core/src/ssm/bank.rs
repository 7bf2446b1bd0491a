use num_complex::{Complex, Complex64};
use rayon::prelude::*;

use super::kernel::{PoleGrads, Poles};
use super::S4dLayer;
use crate::error::{ensure, Result};
use crate::numerics::fft::{next_pow2, RealFft};
use crate::numerics::rng::Rng;
use crate::{Float, Module, Param, Tensor};

/// Independent bidirectional diagonal SSMs, one per feature channel.
///
/// Tensors are laid out `(direction, channel, state)`; direction 0 runs
/// forward in time and direction 1 backward. Both directions of a channel
/// are fused into one two-sided kernel so a channel costs a single FFT
/// convolution.
#[derive(Debug, Clone)]
pub struct S4dBank<F: Float> {
    channels: usize,
    state_dim: usize,
    a_imag: Vec<f64>,
    b: Vec<Complex64>,
    rate_ratio: f64,
    pub rho: Param<F>,
    pub c_re: Param<F>,
    pub c_im: Param<F>,
    pub log_dt: Param<F>,
    pub d: Param<F>,
}

/// Per-channel two-sided kernel spectra from the forward pass.
pub struct BankCache<F: Float> {
    n_fft: usize,
    spectra: Vec<Vec<Complex<F>>>,
}

struct ChannelGrads {
    poles: [PoleGrads; 2],
    d: f64,
}

impl<F: Float> S4dBank<F> {
    pub fn init(prefix: &str, channels: usize, state_dim: usize, rng: &mut Rng) -> Result<Self> {
        ensure!(channels >= 1, InvalidArgument, "bank needs at least one channel");
        let n = state_dim;
        let mut rho = Vec::with_capacity(2 * channels * n);
        let (mut c_re, mut c_im) = (Vec::with_capacity(2 * channels * n), Vec::with_capacity(2 * channels * n));
        let (mut log_dt, mut d) = (Vec::with_capacity(2 * channels), Vec::with_capacity(2 * channels));
        let mut template = None;
        for _ in 0..2 * channels {
            let l = S4dLayer::init_diag_lin(state_dim, rng)?;
            rho.extend(l.rho().iter().map(|&v| F::of(v)));
            c_re.extend(l.c().iter().map(|c| F::of(c.re)));
            c_im.extend(l.c().iter().map(|c| F::of(c.im)));
            log_dt.push(F::of(l.log_dt()));
            d.push(F::of(l.d()));
            template.get_or_insert(l);
        }
        let t = template.expect("at least one channel");
        let a_imag = t.a().iter().map(|a| a.im).collect();
        let sn = [2, channels, n];
        Ok(Self {
            channels,
            state_dim,
            a_imag,
            b: t.b().to_vec(),
            rate_ratio: 1.0,
            rho: Param::new(format!("{prefix}.rho"), Tensor::from_vec(&sn, rho)?),
            c_re: Param::new(format!("{prefix}.c_re"), Tensor::from_vec(&sn, c_re)?),
            c_im: Param::new(format!("{prefix}.c_im"), Tensor::from_vec(&sn, c_im)?),
            log_dt: Param::new(format!("{prefix}.log_dt"), Tensor::from_vec(&[2, channels], log_dt)?),
            d: Param::new(format!("{prefix}.d"), Tensor::from_vec(&[2, channels], d)?),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn rate_ratio(&self) -> f64 {
        self.rate_ratio
    }

    /// Scales every step size by `1 / ratio`.
    pub fn retarget_rate(&mut self, ratio: f64) -> Result<()> {
        ensure!(ratio > 0.0 && ratio.is_finite(), InvalidArgument, "rate ratio must be positive, got {ratio}");
        let r = self.rate_ratio * ratio;
        self.rate_ratio = if (r - 1.0).abs() < 1e-12 { 1.0 } else { r };
        Ok(())
    }

    fn unit(&self, dir: usize, ch: usize) -> usize {
        dir * self.channels + ch
    }

    fn dt(&self, unit: usize) -> f64 {
        self.log_dt.value.data()[unit].f64().exp() / self.rate_ratio
    }

    fn pole_data(&self, unit: usize) -> (Vec<f64>, Vec<Complex64>) {
        let span = unit * self.state_dim..(unit + 1) * self.state_dim;
        let rho = self.rho.value.data()[span.clone()].iter().map(|v| v.f64()).collect();
        let c = self.c_re.value.data()[span.clone()]
            .iter()
            .zip(&self.c_im.value.data()[span])
            .map(|(r, i)| Complex64::new(r.f64(), i.f64()))
            .collect();
        (rho, c)
    }

    /// The SSM of one direction and channel as a standalone layer.
    pub fn layer(&self, dir: usize, ch: usize) -> Result<S4dLayer> {
        let u = self.unit(dir, ch);
        let (rho, c) = self.pole_data(u);
        let a: Vec<Complex64> = rho.iter().zip(&self.a_imag).map(|(r, i)| Complex64::new(-r.exp(), *i)).collect();
        S4dLayer::from_parts(&a, &self.b, &c, self.d.value.data()[u].f64(), self.dt(u))
    }

    fn kernel(&self, unit: usize, len: usize) -> Vec<f64> {
        let (rho, c) = self.pole_data(unit);
        Poles { rho: &rho, a_imag: &self.a_imag, b: &self.b, c: &c, dt: self.dt(unit) }.kernel(len)
    }

    fn skip(&self, ch: usize) -> F {
        self.d.value.data()[self.unit(0, ch)] + self.d.value.data()[self.unit(1, ch)]
    }

    /// Runs the bank over `x`, shaped `(channels, rows·len)`: every channel
    /// holds `rows` independent sequences of `len` samples.
    pub fn forward(&self, x: &[F], rows: usize, len: usize) -> Result<(Vec<F>, BankCache<F>)> {
        let width = rows * len;
        ensure!(len >= 1 && x.len() == self.channels * width, Shape, "bank input has {} values, expected {}", x.len(), self.channels * width);
        let n_fft = next_pow2(2 * len);
        let fft = RealFft::<F>::new(n_fft);
        let spectra: Vec<Vec<Complex<F>>> = (0..self.channels)
            .into_par_iter()
            .map_init(
                || fft.workspace(),
                |ws, ch| {
                    let kf = self.kernel(self.unit(0, ch), len);
                    let kb = self.kernel(self.unit(1, ch), len);
                    let mut k2 = vec![F::zero(); n_fft];
                    for j in 0..len {
                        k2[j] = F::of(kf[j]);
                    }
                    k2[0] += F::of(kb[0]);
                    for j in 1..len {
                        k2[n_fft - j] += F::of(kb[j]);
                    }
                    let mut s = vec![Complex::new(F::zero(), F::zero()); fft.spectrum_len()];
                    fft.forward(&k2, ws, &mut s);
                    s
                },
            )
            .collect();

        let mut y = vec![F::zero(); x.len()];
        let scale = F::one() / F::of(n_fft as f64);
        y.par_chunks_mut(width).zip(x.par_chunks(width)).enumerate().for_each_init(
            || (fft.workspace(), vec![Complex::new(F::zero(), F::zero()); fft.spectrum_len()]),
            |(ws, buf), (ch, (yc, xc))| {
                let d = self.skip(ch);
                for (yr, xr) in yc.chunks_mut(len).zip(xc.chunks(len)) {
                    fft.forward(xr, ws, buf);
                    for (b, s) in buf.iter_mut().zip(&spectra[ch]) {
                        *b = *b * *s;
                    }
                    fft.inverse(buf, ws, scale, yr);
                    for (o, &xi) in yr.iter_mut().zip(xr) {
                        *o += d * xi;
                    }
                }
            },
        );
        Ok((y, BankCache { n_fft, spectra }))
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, x: &[F], rows: usize, len: usize, cache: &BankCache<F>, dy: &[F]) -> Result<Vec<F>> {
        let width = rows * len;
        ensure!(x.len() == self.channels * width && dy.len() == x.len(), Shape, "bank backward shape mismatch");
        let n_fft = cache.n_fft;
        let fft = RealFft::<F>::new(n_fft);
        let scale = F::one() / F::of(n_fft as f64);
        let zero = Complex::new(F::zero(), F::zero());
        let mut dx = vec![F::zero(); x.len()];
        let this = &*self;
        let grads: Vec<ChannelGrads> = dx
            .par_chunks_mut(width)
            .zip(x.par_chunks(width).zip(dy.par_chunks(width)))
            .enumerate()
            .map_init(
                || (fft.workspace(), vec![zero; fft.spectrum_len()], vec![zero; fft.spectrum_len()]),
                |(ws, xs, ds), (ch, (dxc, (xc, dyc)))| {
                    let d = this.skip(ch);
                    let mut acc = vec![zero; fft.spectrum_len()];
                    let mut dd = 0.0;
                    for ((dxr, xr), dyr) in dxc.chunks_mut(len).zip(xc.chunks(len)).zip(dyc.chunks(len)) {
                        fft.forward(xr, ws, xs);
                        fft.forward(dyr, ws, ds);
                        for ((a, &dsv), &xsv) in acc.iter_mut().zip(ds.iter()).zip(xs.iter()) {
                            *a = *a + dsv * xsv.conj();
                        }
                        for (dsv, s) in ds.iter_mut().zip(&cache.spectra[ch]) {
                            *dsv = *dsv * s.conj();
                        }
                        fft.inverse(ds, ws, scale, dxr);
                        for ((o, &g), &xi) in dxr.iter_mut().zip(dyr).zip(xr) {
                            *o += d * g;
                            dd += g.f64() * xi.f64();
                        }
                    }
                    let mut dk2 = vec![F::zero(); n_fft];
                    fft.inverse(&mut acc, ws, scale, &mut dk2);
                    let dkf: Vec<f64> = dk2[..len].iter().map(|v| v.f64()).collect();
                    let dkb: Vec<f64> =
                        (0..len).map(|j| if j == 0 { dk2[0].f64() } else { dk2[n_fft - j].f64() }).collect();
                    let pole_grads = |dir: usize, dk: &[f64]| {
                        let u = this.unit(dir, ch);
                        let (rho, c) = this.pole_data(u);
                        Poles { rho: &rho, a_imag: &this.a_imag, b: &this.b, c: &c, dt: this.dt(u) }.kernel_backward(dk)
                    };
                    ChannelGrads { poles: [pole_grads(0, &dkf), pole_grads(1, &dkb)], d: dd }
                },
            )
            .collect();

        let n = self.state_dim;
        for (ch, g) in grads.into_iter().enumerate() {
            for (dir, pg) in g.poles.iter().enumerate() {
                let u = self.unit(dir, ch);
                let span = u * n..(u + 1) * n;
                for (dst, &v) in self.rho.grad.data_mut()[span.clone()].iter_mut().zip(&pg.rho) {
                    *dst += F::of(v);
                }
                for (dst, &v) in self.c_re.grad.data_mut()[span.clone()].iter_mut().zip(&pg.c_re) {
                    *dst += F::of(v);
                }
                for (dst, &v) in self.c_im.grad.data_mut()[span].iter_mut().zip(&pg.c_im) {
                    *dst += F::of(v);
                }
                let dt = self.dt(u);
                self.log_dt.grad.data_mut()[u] += F::of(pg.dt * dt);
                self.d.grad.data_mut()[u] += F::of(g.d);
            }
        }
        Ok(dx)
    }
}

impl<F: Float> Module<F> for S4dBank<F> {
    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.rho, &self.c_re, &self.c_im, &self.log_dt, &self.d]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.rho, &mut self.c_re, &mut self.c_im, &mut self.log_dt, &mut self.d]
    }
}
