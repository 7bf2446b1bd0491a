use super::Linear;
use crate::error::{ensure, Result};
use crate::numerics::linalg::gemm;
use crate::numerics::rng::Rng;
use crate::{Float, Module, Param};

/// In-place row-wise softmax of an `(rows, cols)` matrix.
pub fn softmax_rows<F: Float>(x: &mut [F], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Scaled dot-product attention of `(l1, d)` queries over `(l2, d)`
/// keys/values. Returns the output and the `(l1, l2)` weights.
pub fn attention<F: Float>(q: &[F], k: &[F], v: &[F], l1: usize, l2: usize, d: usize) -> Result<(Vec<F>, Vec<F>)> {
    ensure!(l2 >= 1, InvalidArgument, "attention over an empty key set");
    ensure!(q.len() == l1 * d && k.len() == l2 * d && v.len() == l2 * d, Shape, "attention operand shapes disagree");
    let mut w = vec![F::zero(); l1 * l2];
    gemm(false, true, l1, l2, d, F::one() / F::of(d as f64).sqrt(), q, k, F::zero(), &mut w);
    softmax_rows(&mut w, l2);
    let mut out = vec![F::zero(); l1 * d];
    gemm(false, false, l1, d, l2, F::one(), &w, v, F::zero(), &mut out);
    Ok((out, w))
}

/// Gradients of [`attention`] with respect to `(q, k, v)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Float>(
    q: &[F],
    k: &[F],
    v: &[F],
    w: &[F],
    l1: usize,
    l2: usize,
    d: usize,
    dout: &[F],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let mut dw = vec![F::zero(); l1 * l2];
    gemm(false, true, l1, l2, d, F::one(), dout, v, F::zero(), &mut dw);
    let mut dv = vec![F::zero(); l2 * d];
    gemm(true, false, l2, d, l1, F::one(), w, dout, F::zero(), &mut dv);
    for (dr, wr) in dw.chunks_exact_mut(l2).zip(w.chunks_exact(l2)) {
        let s: F = dr.iter().zip(wr).map(|(&a, &b)| a * b).sum();
        for (a, &b) in dr.iter_mut().zip(wr) {
            *a = b * (*a - s);
        }
    }
    let scale = F::one() / F::of(d as f64).sqrt();
    let mut dq = vec![F::zero(); l1 * d];
    gemm(false, false, l1, d, l2, scale, &dw, k, F::zero(), &mut dq);
    let mut dk = vec![F::zero(); l2 * d];
    gemm(true, false, l2, d, l1, scale, &dw, q, F::zero(), &mut dk);
    (dq, dk, dv)
}

fn split_heads<F: Float>(x: &[F], n: usize, heads: usize, dh: usize) -> Vec<Vec<F>> {
    (0..heads)
        .map(|h| {
            let mut out = Vec::with_capacity(n * dh);
            for row in x.chunks_exact(heads * dh) {
                out.extend_from_slice(&row[h * dh..(h + 1) * dh]);
            }
            out
        })
        .collect()
}

fn merge_head<F: Float>(dst: &mut [F], src: &[F], h: usize, heads: usize, dh: usize) {
    for (row, s) in dst.chunks_exact_mut(heads * dh).zip(src.chunks_exact(dh)) {
        row[h * dh..(h + 1) * dh].copy_from_slice(s);
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention<F: Float> {
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub output: Linear<F>,
    heads: usize,
}

pub struct MhaCache<F> {
    xq: Vec<F>,
    xkv: Vec<F>,
    l1: usize,
    l2: usize,
    q: Vec<Vec<F>>,
    k: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    w: Vec<Vec<F>>,
    concat: Vec<F>,
}

impl<F: Float> MultiHeadAttention<F> {
    /// `kv_dim` is the width of the key/value source tokens.
    pub fn new(prefix: &str, dim: usize, kv_dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        ensure!(heads > 0 && dim % heads == 0, Config, "embedding width {dim} is not divisible by {heads} heads");
        Ok(Self {
            query: Linear::new(&format!("{prefix}.query"), dim, dim, rng),
            key: Linear::new(&format!("{prefix}.key"), kv_dim, dim, rng),
            value: Linear::new(&format!("{prefix}.value"), kv_dim, dim, rng),
            output: Linear::new(&format!("{prefix}.output"), dim, dim, rng),
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.query.out_dim()
    }

    /// `xq` is `(l1, dim)` and `xkv` is `(l2, kv_dim)`.
    pub fn forward(&self, xq: &[F], l1: usize, xkv: &[F], l2: usize) -> Result<(Vec<F>, MhaCache<F>)> {
        let (d, nh) = (self.dim(), self.heads);
        let dh = d / nh;
        let q = split_heads(&self.query.forward_tokens(xq, l1)?, l1, nh, dh);
        let k = split_heads(&self.key.forward_tokens(xkv, l2)?, l2, nh, dh);
        let v = split_heads(&self.value.forward_tokens(xkv, l2)?, l2, nh, dh);
        let mut concat = vec![F::zero(); l1 * d];
        let mut w = Vec::with_capacity(nh);
        for h in 0..nh {
            let (o, wh) = attention(&q[h], &k[h], &v[h], l1, l2, dh)?;
            merge_head(&mut concat, &o, h, nh, dh);
            w.push(wh);
        }
        let y = self.output.forward_tokens(&concat, l1)?;
        Ok((y, MhaCache { xq: xq.to_vec(), xkv: xkv.to_vec(), l1, l2, q, k, v, w, concat }))
    }

    /// Returns `(∂L/∂xq, ∂L/∂xkv)`.
    pub fn backward(&mut self, c: &MhaCache<F>, dy: &[F]) -> (Vec<F>, Vec<F>) {
        let (d, nh) = (self.dim(), self.heads);
        let dh = d / nh;
        let dconcat = self.output.backward_tokens(&c.concat, c.l1, dy);
        let dheads = split_heads(&dconcat, c.l1, nh, dh);
        let mut dq = vec![F::zero(); c.l1 * d];
        let mut dk = vec![F::zero(); c.l2 * d];
        let mut dv = vec![F::zero(); c.l2 * d];
        for h in 0..nh {
            let (a, b, e) = attention_backward(&c.q[h], &c.k[h], &c.v[h], &c.w[h], c.l1, c.l2, dh, &dheads[h]);
            merge_head(&mut dq, &a, h, nh, dh);
            merge_head(&mut dk, &b, h, nh, dh);
            merge_head(&mut dv, &e, h, nh, dh);
        }
        let dxq = self.query.backward_tokens(&c.xq, c.l1, &dq);
        let mut dxkv = self.key.backward_tokens(&c.xkv, c.l2, &dk);
        for (a, b) in dxkv.iter_mut().zip(self.value.backward_tokens(&c.xkv, c.l2, &dv)) {
            *a += b;
        }
        (dxq, dxkv)
    }
}

impl<F: Float> Module<F> for MultiHeadAttention<F> {
    fn params(&self) -> Vec<&Param<F>> {
        [&self.query, &self.key, &self.value, &self.output].into_iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut p = self.query.params_mut();
        p.extend(self.key.params_mut());
        p.extend(self.value.params_mut());
        p.extend(self.output.params_mut());
        p
    }
}
