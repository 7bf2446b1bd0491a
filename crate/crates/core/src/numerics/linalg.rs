//! Row-major dense matrix helpers backed by `matrixmultiply`.

use super::Float;

/// `c[m×n] = alpha · op(a) · op(b) + beta · c`.
///
/// `a` is stored row-major as `m×k` (or `k×m` when `trans_a`), `b` as `k×n`
/// (or `n×k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<F: Float>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: F,
    a: &[F],
    b: &[F],
    beta: F,
    c: &mut [F],
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every address touched by the strides.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y[rows×cols] += bias[r]` broadcast along each row.
pub fn add_row_bias<F: Float>(y: &mut [F], bias: &[F], cols: usize) {
    for (row, &b) in y.chunks_exact_mut(cols).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

/// `acc[r] += Σ_c x[r, c]`.
pub fn accumulate_row_sums<F: Float>(x: &[F], cols: usize, acc: &mut [F]) {
    for (row, a) in x.chunks_exact(cols).zip(acc.iter_mut()) {
        *a += row.iter().copied().sum::<F>();
    }
}

/// `acc[c] += Σ_r x[r, c]`.
pub fn accumulate_col_sums<F: Float>(x: &[F], cols: usize, acc: &mut [F]) {
    for row in x.chunks_exact(cols) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

pub fn axpy<F: Float>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
