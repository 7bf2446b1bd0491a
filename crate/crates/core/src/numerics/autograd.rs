//! A small recorded-tape reverse-mode differentiator.
//!
//! The network layers in this crate carry hand-written backward passes for
//! speed; this tape is the general-purpose facility for ad-hoc scalar losses
//! and is checked against finite differences like everything else.
//!
//! ```
//! use eegdm::numerics::autograd::Tape;
//! use eegdm::Tensor;
//!
//! let tape = Tape::new();
//! let w = tape.param(Tensor::from_vec(&[2], vec![1.0f64, 2.0]).unwrap());
//! let loss = w.square().sum();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::cell::RefCell;

use super::{linalg, Float, Tensor};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    Square(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<F> {
    nodes: RefCell<Vec<Node<F>>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t, F> {
    tape: &'t Tape<F>,
    id: usize,
}

/// Gradients of one `backward` call, indexed by variable.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, var: Var<'_, F>) -> Option<&Tensor<F>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    fn push(&self, value: Tensor<F>, op: Op, requires_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf, false)
    }
}

impl<'t, F: Float> Var<'t, F> {
    pub fn value(&self) -> Tensor<F> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(&self, op: Op, f: impl Fn(F) -> F) -> Var<'t, F> {
        let value = self.tape.nodes.borrow()[self.id].value.map(f);
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: &Var<'t, F>, op: Op, f: impl Fn(F, F) -> F) -> Result<Var<'t, F>> {
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        ensure!(
            a.shape() == b.shape(),
            Shape,
            "elementwise op on {:?} and {:?}",
            a.shape(),
            b.shape()
        );
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(a.shape(), data)?;
        let rg = nodes[self.id].requires_grad || nodes[other.id].requires_grad;
        drop(nodes);
        Ok(self.tape.push(value, op, rg))
    }

    pub fn add(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Var<'t, F> {
        let cf = F::of(c);
        self.unary(Op::Scale(self.id, c), move |a| a * cf)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        ensure!(
            a.shape().len() == 2 && b.shape().len() == 2 && a.shape()[1] == b.shape()[0],
            Shape,
            "matmul of {:?} and {:?}",
            a.shape(),
            b.shape()
        );
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![F::zero(); m * n];
        linalg::gemm(false, false, m, n, k, F::one(), a.data(), b.data(), F::zero(), &mut c);
        let rg = nodes[self.id].requires_grad || nodes[other.id].requires_grad;
        drop(nodes);
        Ok(self.tape.push(Tensor::from_vec(&[m, n], c)?, Op::MatMul(self.id, other.id), rg))
    }

    pub fn sum(&self) -> Var<'t, F> {
        let s = self.tape.nodes.borrow()[self.id].value.sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(&self) -> Var<'t, F> {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].value;
        let m = v.sum() / F::of(v.len().max(1) as f64);
        drop(nodes);
        self.tape.push(Tensor::scalar(m), Op::Mean(self.id), self.requires_grad())
    }

    pub fn square(&self) -> Var<'t, F> {
        self.unary(Op::Square(self.id), |a| a * a)
    }

    pub fn tanh(&self) -> Var<'t, F> {
        self.unary(Op::Tanh(self.id), |a| a.tanh())
    }

    pub fn sigmoid(&self) -> Var<'t, F> {
        self.unary(Op::Sigmoid(self.id), |a| F::one() / (F::one() + (-a).exp()))
    }

    pub fn relu(&self) -> Var<'t, F> {
        self.unary(Op::Relu(self.id), |a| a.max(F::zero()))
    }

    pub fn exp(&self) -> Var<'t, F> {
        self.unary(Op::Exp(self.id), |a| a.exp())
    }

    /// Gradients of this scalar with respect to every reachable variable.
    pub fn backward(&self) -> Result<Gradients<F>> {
        let nodes = self.tape.nodes.borrow();
        ensure!(
            nodes[self.id].value.is_scalar(),
            InvalidArgument,
            "backward needs a scalar loss, got shape {:?}",
            nodes[self.id].value.shape()
        );
        let mut grads: Vec<Option<Tensor<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(Tensor::full(nodes[self.id].value.shape(), F::one()));

        fn acc<F: Float>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) {
            match slot {
                Some(t) => t.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                None => *slot = Some(g),
            }
        }
        let zip = |a: &Tensor<F>, b: &Tensor<F>, f: &dyn Fn(F, F) -> F| {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_vec(a.shape(), data).expect("same shape")
        };

        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads[a], g.clone());
                    acc(&mut grads[b], g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[a], g.clone());
                    acc(&mut grads[b], g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = zip(&g, &nodes[b].value, &|x, y| x * y);
                    let gb = zip(&g, &nodes[a].value, &|x, y| x * y);
                    acc(&mut grads[a], ga);
                    acc(&mut grads[b], gb);
                }
                Op::Scale(a, c) => {
                    let cf = F::of(c);
                    acc(&mut grads[a], g.map(|v| v * cf));
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a].value, &nodes[b].value);
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    let mut ga = vec![F::zero(); m * k];
                    linalg::gemm(false, true, m, k, n, F::one(), g.data(), bv.data(), F::zero(), &mut ga);
                    let mut gb = vec![F::zero(); k * n];
                    linalg::gemm(true, false, k, n, m, F::one(), av.data(), g.data(), F::zero(), &mut gb);
                    acc(&mut grads[a], Tensor::from_vec(&[m, k], ga)?);
                    acc(&mut grads[b], Tensor::from_vec(&[k, n], gb)?);
                }
                Op::Sum(a) => {
                    acc(&mut grads[a], Tensor::full(nodes[a].value.shape(), g.data()[0]));
                }
                Op::Mean(a) => {
                    let n = F::of(nodes[a].value.len().max(1) as f64);
                    acc(&mut grads[a], Tensor::full(nodes[a].value.shape(), g.data()[0] / n));
                }
                Op::Square(a) => {
                    let two = F::of(2.0);
                    acc(&mut grads[a], zip(&g, &nodes[a].value, &|gv, x| gv * two * x));
                }
                Op::Tanh(a) => {
                    acc(&mut grads[a], zip(&g, &node.value, &|gv, y| gv * (F::one() - y * y)));
                }
                Op::Sigmoid(a) => {
                    acc(&mut grads[a], zip(&g, &node.value, &|gv, y| gv * y * (F::one() - y)));
                }
                Op::Relu(a) => {
                    acc(
                        &mut grads[a],
                        zip(&g, &nodes[a].value, &|gv, x| if x > F::zero() { gv } else { F::zero() }),
                    );
                }
                Op::Exp(a) => {
                    acc(&mut grads[a], zip(&g, &node.value, &|gv, y| gv * y));
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        for (id, slot) in grads.iter_mut().enumerate() {
            if !(matches!(nodes[id].op, Op::Leaf) && nodes[id].requires_grad) {
                *slot = None;
            }
        }
        // Parameters that do not influence the loss still get a zero gradient.
        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_squares() {
        let tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        let g = w.square().sum().backward().unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let tape = Tape::new();
        let w = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let c = tape.constant(t(&[1], &[5.0]));
        let g = c.sum().backward().unwrap();
        assert!(g.get(w).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(w.square().backward().is_err());
    }

    #[test]
    fn repeated_backward_is_idempotent() {
        let tape = Tape::new();
        let w = tape.param(t(&[2], &[0.3, -0.7]));
        let loss = w.tanh().square().sum();
        let a = loss.backward().unwrap().get(w).unwrap().clone();
        let b = loss.backward().unwrap().get(w).unwrap().clone();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut r = rng::seeded(3);
        let a0 = Tensor::<f64>::randn(&[3, 4], 1.0, &mut r);
        let b0 = Tensor::<f64>::randn(&[4, 2], 1.0, &mut r);
        let c0 = Tensor::<f64>::randn(&[3, 2], 1.0, &mut r);
        let loss_of = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let tape = Tape::new();
            let (av, bv, cv) = (tape.constant(a.clone()), tape.constant(b.clone()), tape.constant(c0.clone()));
            let y = av.matmul(&bv).unwrap();
            let z = y.sigmoid().mul(&cv.tanh()).unwrap().add(&y.relu()).unwrap();
            let z = z.sub(&cv.exp().scale(0.1)).unwrap();
            z.square().mean().value().data()[0]
        };
        let tape = Tape::new();
        let (av, bv, cv) = (tape.param(a0.clone()), tape.param(b0.clone()), tape.constant(c0.clone()));
        let y = av.matmul(&bv).unwrap();
        let z = y.sigmoid().mul(&cv.tanh()).unwrap().add(&y.relu()).unwrap();
        let z = z.sub(&cv.exp().scale(0.1)).unwrap();
        let grads = z.square().mean().backward().unwrap();
        let h = 1e-6;
        for (var, base, which) in [(av, &a0, 0), (bv, &b0, 1)] {
            let g = grads.get(var).unwrap();
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus.data_mut()[i] += h;
                let mut minus = base.clone();
                minus.data_mut()[i] -= h;
                let (lp, lm) = if which == 0 {
                    (loss_of(&plus, &b0), loss_of(&minus, &b0))
                } else {
                    (loss_of(&a0, &plus), loss_of(&a0, &minus))
                };
                let fd = (lp - lm) / (2.0 * h);
                let an = g.data()[i];
                assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-6), "{fd} vs {an}");
            }
        }
    }
}
