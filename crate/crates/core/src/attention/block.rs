use rand::Rng as _;

use super::{LayerNorm, Linear, MhaCache, MultiHeadAttention, NormCache};
use crate::error::Result;
use crate::numerics::rng::Rng;
use crate::{Float, Module, Param};

const GELU_C: f64 = 0.797_884_560_802_865_4;

fn gelu<F: Float>(x: F) -> F {
    let u = F::of(GELU_C) * (x + F::of(0.044715) * x * x * x);
    F::of(0.5) * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Float>(x: F) -> F {
    let u = F::of(GELU_C) * (x + F::of(0.044715) * x * x * x);
    let t = u.tanh();
    let du = F::of(GELU_C) * (F::one() + F::of(3.0 * 0.044715) * x * x);
    F::of(0.5) * (F::one() + t) + F::of(0.5) * x * (F::one() - t * t) * du
}

/// Inverted dropout applied to residual branches while training.
pub struct Dropout {
    pub rate: f64,
    pub rng: Rng,
}

impl Dropout {
    fn mask<F: Float>(&mut self, n: usize) -> Option<Vec<F>> {
        (self.rate > 0.0).then(|| {
            let keep = F::of(1.0 / (1.0 - self.rate));
            (0..n).map(|_| if self.rng.random::<f64>() < self.rate { F::zero() } else { keep }).collect()
        })
    }
}

fn apply_mask<F: Float>(x: &mut [F], mask: &Option<Vec<F>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
}

/// Two-layer feed-forward map with a tanh-approximated GELU.
#[derive(Debug, Clone)]
pub struct Mlp<F: Float> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

pub struct MlpCache<F> {
    x: Vec<F>,
    pre: Vec<F>,
    act: Vec<F>,
    n: usize,
}

impl<F: Float> Mlp<F> {
    pub fn new(prefix: &str, dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self { fc1: Linear::new(&format!("{prefix}.fc1"), dim, hidden, rng), fc2: Linear::new(&format!("{prefix}.fc2"), hidden, dim, rng) }
    }

    pub fn forward(&self, x: &[F], n: usize) -> Result<(Vec<F>, MlpCache<F>)> {
        let pre = self.fc1.forward_tokens(x, n)?;
        let act: Vec<F> = pre.iter().map(|&v| gelu(v)).collect();
        let y = self.fc2.forward_tokens(&act, n)?;
        Ok((y, MlpCache { x: x.to_vec(), pre, act, n }))
    }

    pub fn backward(&mut self, c: &MlpCache<F>, dy: &[F]) -> Vec<F> {
        let mut da = self.fc2.backward_tokens(&c.act, c.n, dy);
        da.iter_mut().zip(&c.pre).for_each(|(g, &p)| *g *= gelu_grad(p));
        self.fc1.backward_tokens(&c.x, c.n, &da)
    }
}

impl<F: Float> Module<F> for Mlp<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut p = self.fc1.params();
        p.extend(self.fc2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut p = self.fc1.params_mut();
        p.extend(self.fc2.params_mut());
        p
    }
}

fn add_into<F: Float>(acc: &mut [F], x: &[F]) {
    acc.iter_mut().zip(x).for_each(|(a, &b)| *a += b);
}

/// Pre-norm self-attention block.
#[derive(Debug, Clone)]
pub struct EncoderBlock<F: Float> {
    pub norm1: LayerNorm<F>,
    pub attn: MultiHeadAttention<F>,
    pub norm2: LayerNorm<F>,
    pub mlp: Mlp<F>,
}

pub struct EncoderCache<F> {
    n1: NormCache<F>,
    attn: MhaCache<F>,
    m1: Option<Vec<F>>,
    n2: NormCache<F>,
    mlp: MlpCache<F>,
    m2: Option<Vec<F>>,
}

impl<F: Float> EncoderBlock<F> {
    pub fn new(prefix: &str, dim: usize, heads: usize, mlp_hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&format!("{prefix}.norm1"), dim),
            attn: MultiHeadAttention::new(&format!("{prefix}.attn"), dim, dim, heads, rng)?,
            norm2: LayerNorm::new(&format!("{prefix}.norm2"), dim),
            mlp: Mlp::new(&format!("{prefix}.mlp"), dim, mlp_hidden, rng),
        })
    }

    pub fn forward(&self, x: &[F], n: usize, mut drop: Option<&mut Dropout>) -> Result<(Vec<F>, EncoderCache<F>)> {
        let (h, n1) = self.norm1.forward(x)?;
        let (mut a, attn) = self.attn.forward(&h, n, &h, n)?;
        let m1 = drop.as_deref_mut().and_then(|d| d.mask(a.len()));
        apply_mask(&mut a, &m1);
        let mut y = x.to_vec();
        add_into(&mut y, &a);
        let (h2, n2) = self.norm2.forward(&y)?;
        let (mut f, mlp) = self.mlp.forward(&h2, n)?;
        let m2 = drop.and_then(|d| d.mask(f.len()));
        apply_mask(&mut f, &m2);
        add_into(&mut y, &f);
        Ok((y, EncoderCache { n1, attn, m1, n2, mlp, m2 }))
    }

    pub fn backward(&mut self, c: &EncoderCache<F>, dy: &[F]) -> Vec<F> {
        let mut g = dy.to_vec();
        apply_mask(&mut g, &c.m2);
        let dh2 = self.mlp.backward(&c.mlp, &g);
        let mut dx = dy.to_vec();
        add_into(&mut dx, &self.norm2.backward(&c.n2, &dh2));
        let mut g = dx.clone();
        apply_mask(&mut g, &c.m1);
        let (dq, dkv) = self.attn.backward(&c.attn, &g);
        let mut dh = dq;
        add_into(&mut dh, &dkv);
        add_into(&mut dx, &self.norm1.backward(&c.n1, &dh));
        dx
    }
}

impl<F: Float> Module<F> for EncoderBlock<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut p = self.norm1.params();
        p.extend(self.attn.params());
        p.extend(self.norm2.params());
        p.extend(self.mlp.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut p = self.norm1.params_mut();
        p.extend(self.attn.params_mut());
        p.extend(self.norm2.params_mut());
        p.extend(self.mlp.params_mut());
        p
    }
}

/// Pre-norm block: self-attention, cross-attention into a memory, MLP.
#[derive(Debug, Clone)]
pub struct DecoderBlock<F: Float> {
    pub norm1: LayerNorm<F>,
    pub self_attn: MultiHeadAttention<F>,
    pub norm2: LayerNorm<F>,
    pub cross_attn: MultiHeadAttention<F>,
    pub norm3: LayerNorm<F>,
    pub mlp: Mlp<F>,
}

pub struct DecoderCache<F> {
    n1: NormCache<F>,
    sa: MhaCache<F>,
    m1: Option<Vec<F>>,
    n2: NormCache<F>,
    ca: MhaCache<F>,
    m2: Option<Vec<F>>,
    n3: NormCache<F>,
    mlp: MlpCache<F>,
    m3: Option<Vec<F>>,
}

impl<F: Float> DecoderBlock<F> {
    pub fn new(prefix: &str, dim: usize, memory_dim: usize, heads: usize, mlp_hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&format!("{prefix}.norm1"), dim),
            self_attn: MultiHeadAttention::new(&format!("{prefix}.self_attn"), dim, dim, heads, rng)?,
            norm2: LayerNorm::new(&format!("{prefix}.norm2"), dim),
            cross_attn: MultiHeadAttention::new(&format!("{prefix}.cross_attn"), dim, memory_dim, heads, rng)?,
            norm3: LayerNorm::new(&format!("{prefix}.norm3"), dim),
            mlp: Mlp::new(&format!("{prefix}.mlp"), dim, mlp_hidden, rng),
        })
    }

    /// `x` is `(n, dim)` queries, `memory` is `(m, memory_dim)`.
    pub fn forward(&self, x: &[F], n: usize, memory: &[F], m: usize, mut drop: Option<&mut Dropout>) -> Result<(Vec<F>, DecoderCache<F>)> {
        let (h, n1) = self.norm1.forward(x)?;
        let (mut a, sa) = self.self_attn.forward(&h, n, &h, n)?;
        let m1 = drop.as_deref_mut().and_then(|d| d.mask(a.len()));
        apply_mask(&mut a, &m1);
        let mut y = x.to_vec();
        add_into(&mut y, &a);
        let (h2, n2) = self.norm2.forward(&y)?;
        let (mut c, ca) = self.cross_attn.forward(&h2, n, memory, m)?;
        let m2 = drop.as_deref_mut().and_then(|d| d.mask(c.len()));
        apply_mask(&mut c, &m2);
        add_into(&mut y, &c);
        let (h3, n3) = self.norm3.forward(&y)?;
        let (mut f, mlp) = self.mlp.forward(&h3, n)?;
        let m3 = drop.and_then(|d| d.mask(f.len()));
        apply_mask(&mut f, &m3);
        add_into(&mut y, &f);
        Ok((y, DecoderCache { n1, sa, m1, n2, ca, m2, n3, mlp, m3 }))
    }

    /// Returns `(∂L/∂x, ∂L/∂memory)`.
    pub fn backward(&mut self, c: &DecoderCache<F>, dy: &[F]) -> (Vec<F>, Vec<F>) {
        let mut g = dy.to_vec();
        apply_mask(&mut g, &c.m3);
        let dh3 = self.mlp.backward(&c.mlp, &g);
        let mut dx = dy.to_vec();
        add_into(&mut dx, &self.norm3.backward(&c.n3, &dh3));

        let mut g = dx.clone();
        apply_mask(&mut g, &c.m2);
        let (dh2, dmem) = self.cross_attn.backward(&c.ca, &g);
        add_into(&mut dx, &self.norm2.backward(&c.n2, &dh2));

        let mut g = dx.clone();
        apply_mask(&mut g, &c.m1);
        let (dq, dkv) = self.self_attn.backward(&c.sa, &g);
        let mut dh = dq;
        add_into(&mut dh, &dkv);
        add_into(&mut dx, &self.norm1.backward(&c.n1, &dh));
        (dx, dmem)
    }
}

impl<F: Float> Module<F> for DecoderBlock<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut p = self.norm1.params();
        p.extend(self.self_attn.params());
        p.extend(self.norm2.params());
        p.extend(self.cross_attn.params());
        p.extend(self.norm3.params());
        p.extend(self.mlp.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut p = self.norm1.params_mut();
        p.extend(self.self_attn.params_mut());
        p.extend(self.norm2.params_mut());
        p.extend(self.cross_attn.params_mut());
        p.extend(self.norm3.params_mut());
        p.extend(self.mlp.params_mut());
        p
    }
}
