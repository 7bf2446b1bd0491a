use crate::error::{ensure, Result};
use crate::numerics::linalg::{accumulate_col_sums, accumulate_row_sums, add_row_bias, gemm};
use crate::numerics::rng::Rng;
use crate::{Float, Module, Param, Tensor};

/// Affine map `y = W x + b` with `W` stored `(out, in)`.
///
/// Two layouts are supported: token-major `(n, in)` activations, and
/// feature-major `(in, width)` activations as used by the backbone.
#[derive(Debug, Clone)]
pub struct Linear<F: Float> {
    pub weight: Param<F>,
    pub bias: Param<F>,
}

impl<F: Float> Linear<F> {
    /// Weights uniform in `±1/√in`, zero bias.
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: Param::new(format!("{prefix}.weight"), Tensor::uniform(&[out_dim, in_dim], bound, rng)),
            bias: Param::no_decay(format!("{prefix}.bias"), Tensor::zeros(&[out_dim])),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    /// `(n, in) → (n, out)`.
    pub fn forward_tokens(&self, x: &[F], n: usize) -> Result<Vec<F>> {
        let (i, o) = (self.in_dim(), self.out_dim());
        ensure!(x.len() == n * i, Shape, "linear input has {} values, expected {n}×{i}", x.len());
        let mut y = vec![F::zero(); n * o];
        for row in y.chunks_exact_mut(o) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(false, true, n, o, i, F::one(), x, self.weight.value.data(), F::one(), &mut y);
        Ok(y)
    }

    pub fn backward_tokens(&mut self, x: &[F], n: usize, dy: &[F]) -> Vec<F> {
        let (i, o) = (self.in_dim(), self.out_dim());
        gemm(true, false, o, i, n, F::one(), dy, x, F::one(), self.weight.grad.data_mut());
        accumulate_col_sums(dy, o, self.bias.grad.data_mut());
        let mut dx = vec![F::zero(); n * i];
        gemm(false, false, n, i, o, F::one(), dy, self.weight.value.data(), F::zero(), &mut dx);
        dx
    }

    /// `(in, width) → (out, width)`.
    pub fn forward_features(&self, x: &[F], width: usize) -> Result<Vec<F>> {
        let (i, o) = (self.in_dim(), self.out_dim());
        ensure!(x.len() == i * width, Shape, "linear input has {} values, expected {i}×{width}", x.len());
        let mut y = vec![F::zero(); o * width];
        gemm(false, false, o, width, i, F::one(), self.weight.value.data(), x, F::zero(), &mut y);
        add_row_bias(&mut y, self.bias.value.data(), width);
        Ok(y)
    }

    pub fn backward_features(&mut self, x: &[F], width: usize, dy: &[F]) -> Vec<F> {
        let (i, o) = (self.in_dim(), self.out_dim());
        gemm(false, true, o, i, width, F::one(), dy, x, F::one(), self.weight.grad.data_mut());
        accumulate_row_sums(dy, width, self.bias.grad.data_mut());
        let mut dx = vec![F::zero(); i * width];
        gemm(true, false, i, width, o, F::one(), self.weight.value.data(), dy, F::zero(), &mut dx);
        dx
    }
}

impl<F: Float> Module<F> for Linear<F> {
    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::seeded;

    #[test]
    fn layouts_agree() {
        let mut rng = seeded(0);
        let mut lin = Linear::<f64>::new("l", 3, 2, &mut rng);
        lin.bias.value.data_mut().copy_from_slice(&[0.5, -1.0]);
        let tokens = [1.0, 2.0, 3.0, -1.0, 0.0, 4.0];
        let features = [1.0, -1.0, 2.0, 0.0, 3.0, 4.0];
        let yt = lin.forward_tokens(&tokens, 2).unwrap();
        let yf = lin.forward_features(&features, 2).unwrap();
        for n in 0..2 {
            for o in 0..2 {
                assert!((yt[n * 2 + o] - yf[o * 2 + n]).abs() < 1e-12);
            }
        }
        assert!(lin.forward_tokens(&tokens, 3).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(1);
        let mut lin = Linear::<f64>::new("l", 3, 2, &mut rng);
        let x = [0.3, -0.2, 1.0, 0.7, 0.1, -0.5];
        let w = [1.0, 2.0, -1.0, 0.5];
        let loss = |l: &Linear<f64>, x: &[f64]| -> f64 {
            l.forward_tokens(x, 2).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let dx = lin.backward_tokens(&x, 2, &w);
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut p, mut m) = (x, x);
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&lin, &p) - loss(&lin, &m)) / (2.0 * h) - dx[i]).abs() < 1e-8);
        }
        for j in 0..6 {
            let g = lin.weight.grad.data()[j];
            let o = lin.weight.value.data()[j];
            lin.weight.value.data_mut()[j] = o + h;
            let lp = loss(&lin, &x);
            lin.weight.value.data_mut()[j] = o - h;
            let lm = loss(&lin, &x);
            lin.weight.value.data_mut()[j] = o;
            assert!(((lp - lm) / (2.0 * h) - g).abs() < 1e-8);
        }
    }
}
