use crate::error::{ensure, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    ensure!(scores.len() == labels.len(), Shape, "{} scores for {} labels", scores.len(), labels.len());
    ensure!(scores.iter().all(|s| s.is_finite()), Numeric, "scores must be finite");
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    ensure!(pos > 0 && neg > 0, InvalidArgument, "both classes must be present");
    Ok((pos, neg))
}

/// `(AUROC, AUPRC)` for binary `labels` (true = positive).
///
/// AUROC is the rank statistic with averaged ties; AUPRC is the step-wise
/// average precision over distinct thresholds.
pub fn auroc_auprc(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let auroc = (rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos as f64 * neg as f64);

    let (mut tp, mut fp, mut prev_recall, mut auprc) = (0usize, 0usize, 0.0, 0.0);
    let mut k = order.len();
    while k > 0 {
        let s = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == s {
            if labels[order[k - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok((auroc, auprc))
}

/// AUROC by counting correctly ordered positive/negative pairs.
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut wins = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}
