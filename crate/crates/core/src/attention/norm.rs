use crate::error::{ensure, Result};
use crate::{Float, Module, Param, Tensor};

const EPS: f64 = 1e-5;

/// Per-token layer normalisation over the feature axis.
#[derive(Debug, Clone)]
pub struct LayerNorm<F: Float> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
}

pub struct NormCache<F> {
    xhat: Vec<F>,
    inv_std: Vec<F>,
}

impl<F: Float> LayerNorm<F> {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            gamma: Param::new(format!("{prefix}.gamma"), Tensor::full(&[dim], F::one())),
            beta: Param::no_decay(format!("{prefix}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// `(n, dim) → (n, dim)`.
    pub fn forward(&self, x: &[F]) -> Result<(Vec<F>, NormCache<F>)> {
        let d = self.dim();
        ensure!(x.len() % d == 0, Shape, "layer norm input of {} values is not a multiple of {d}", x.len());
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        let n = x.len() / d;
        let mut y = vec![F::zero(); x.len()];
        let mut xhat = vec![F::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(n);
        let df = F::of(d as f64);
        for ((row, out), xh) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)).zip(xhat.chunks_exact_mut(d)) {
            let mean = row.iter().copied().sum::<F>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
            let is = F::one() / (var + F::of(EPS)).sqrt();
            for k in 0..d {
                xh[k] = (row[k] - mean) * is;
                out[k] = xh[k] * g[k] + b[k];
            }
            inv_std.push(is);
        }
        Ok((y, NormCache { xhat, inv_std }))
    }

    pub fn backward(&mut self, cache: &NormCache<F>, dy: &[F]) -> Vec<F> {
        let d = self.dim();
        let df = F::of(d as f64);
        let mut dx = vec![F::zero(); dy.len()];
        let g = self.gamma.value.data().to_vec();
        let mut dg = vec![F::zero(); d];
        let mut db = vec![F::zero(); d];
        for (i, ((dyr, xh), dxr)) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)).zip(dx.chunks_exact_mut(d)).enumerate() {
            let (mut m1, mut m2) = (F::zero(), F::zero());
            for k in 0..d {
                dg[k] += dyr[k] * xh[k];
                db[k] += dyr[k];
                let dxh = dyr[k] * g[k];
                m1 += dxh;
                m2 += dxh * xh[k];
            }
            let (m1, m2) = (m1 / df, m2 / df);
            for k in 0..d {
                dxr[k] = cache.inv_std[i] * (dyr[k] * g[k] - m1 - xh[k] * m2);
            }
        }
        for (a, b) in self.gamma.grad.data_mut().iter_mut().zip(dg) {
            *a += b;
        }
        for (a, b) in self.beta.grad.data_mut().iter_mut().zip(db) {
            *a += b;
        }
        dx
    }
}

impl<F: Float> Module<F> for LayerNorm<F> {
    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
