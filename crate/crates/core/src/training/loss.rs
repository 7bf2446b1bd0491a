use crate::attention::softmax_rows;
use crate::error::{ensure, Result};
use crate::Float;

/// Label-smoothed, optionally class-weighted cross-entropy averaged over
/// the batch. `logits` is `(n, k)`; returns the loss and `∂L/∂logits`.
pub fn smoothed_weighted_ce<F: Float>(
    logits: &[F],
    labels: &[usize],
    k: usize,
    smoothing: f64,
    weights: Option<&[f64]>,
) -> Result<(f64, Vec<F>)> {
    ensure!((0.0..1.0).contains(&smoothing), InvalidArgument, "label smoothing must lie in [0, 1)");
    ensure!(logits.len() == labels.len() * k && !labels.is_empty(), Shape, "{} logits for {} labels", logits.len(), labels.len());
    if let Some(w) = weights {
        ensure!(w.len() == k && w.iter().all(|&v| v > 0.0), InvalidArgument, "class weights must be {k} positive values");
    }
    let n = labels.len() as f64;
    let mut probs: Vec<f64> = logits.iter().map(|v| v.f64()).collect();
    let raw = probs.clone();
    softmax_rows(&mut probs, k);
    let mut loss = 0.0;
    let mut grad = vec![F::zero(); logits.len()];
    for (i, &y) in labels.iter().enumerate() {
        ensure!(y < k, InvalidArgument, "label {y} out of range for {k} classes");
        let row = &raw[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let w = weights.map_or(1.0, |w| w[y]);
        for c in 0..k {
            let target = smoothing / k as f64 + if c == y { 1.0 - smoothing } else { 0.0 };
            loss -= w * target * (row[c] - lse);
            grad[i * k + c] = F::of(w * (probs[i * k + c] - target) / n);
        }
    }
    Ok((loss / n, grad))
}

/// `(total / k) / count_c`, rescaled to mean one over classes.
pub fn class_weights(labels: &[usize], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l < k {
            counts[l] += 1;
        }
    }
    let total = labels.len() as f64;
    let raw: Vec<f64> = counts.iter().map(|&c| (total / k as f64) / c.max(1) as f64).collect();
    let mean = raw.iter().sum::<f64>() / k as f64;
    raw.iter().map(|w| w / mean).collect()
}
