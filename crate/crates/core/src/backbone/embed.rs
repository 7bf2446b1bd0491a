use crate::error::{ensure, Result};

/// Interleaved `(sin, cos)` of `t·ω_k` over `dim/2` frequencies
/// `ω_k = 10000^{-k/(dim/2)}`.
pub fn step_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    ensure!(dim % 2 == 0 && dim > 0, InvalidArgument, "step embedding width must be even, got {dim}");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let w = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let phase = t as f64 * w;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step() {
        let e = step_embedding(0, 8).unwrap();
        for k in 0..4 {
            assert_eq!(e[2 * k], 0.0);
            assert_eq!(e[2 * k + 1], 1.0);
        }
        assert!(step_embedding(1, 7).is_err());
    }

    #[test]
    fn steps_up_to_fifty_are_distinct_and_bounded() {
        let dim = 128;
        let all: Vec<Vec<f64>> = (0..=50).map(|t| step_embedding(t, dim).unwrap()).collect();
        let mut min = f64::INFINITY;
        for i in 0..all.len() {
            let norm = all[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= (dim as f64).sqrt() + 1e-12);
            for j in 0..i {
                let d = all[i].iter().zip(&all[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                min = min.min(d);
            }
        }
        assert!(min > 0.0);
    }
}
