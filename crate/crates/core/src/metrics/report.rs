use serde::{Deserialize, Serialize};

use super::{argmax, auroc_auprc, ConfusionMatrix};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kappa: f64,
    pub bacc: f64,
    pub wf1: f64,
    /// Binary tasks only.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricReport {
    /// `probs` is `(n, k)` row-major.
    pub fn from_probs(probs: &[f64], labels: &[usize], k: usize) -> Result<Self> {
        ensure!(k >= 2 && probs.len() == labels.len() * k, Shape, "{} probabilities for {} samples", probs.len(), labels.len());
        ensure!(!labels.is_empty(), InvalidArgument, "no samples to evaluate");
        let preds: Vec<usize> = probs.chunks_exact(k).map(argmax).collect();
        let cm = ConfusionMatrix::from_predictions(labels, &preds, k)?;
        let (auroc, auprc) = if k == 2 {
            let scores: Vec<f64> = probs.chunks_exact(2).map(|p| p[1]).collect();
            let bin: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
            match auroc_auprc(&scores, &bin) {
                Ok((a, p)) => (Some(a), Some(p)),
                Err(_) => (None, None),
            }
        } else {
            (None, None)
        };
        Ok(Self { kappa: cm.cohen_kappa(), bacc: cm.balanced_accuracy(), wf1: cm.weighted_f1(), auroc, auprc, confusion: cm.counts })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedStat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

impl SeedStat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub runs: usize,
    pub kappa: SeedStat,
    pub bacc: SeedStat,
    pub wf1: SeedStat,
    pub auroc: Option<SeedStat>,
    pub auprc: Option<SeedStat>,
}

/// Mean ± std of each metric across runs.
pub fn summarize(reports: &[MetricReport]) -> Result<MetricSummary> {
    ensure!(!reports.is_empty(), InvalidArgument, "no runs to summarise");
    let pick = |f: fn(&MetricReport) -> f64| SeedStat::of(&reports.iter().map(f).collect::<Vec<_>>());
    let opt = |f: fn(&MetricReport) -> Option<f64>| -> Option<SeedStat> {
        reports.iter().map(f).collect::<Option<Vec<_>>>().map(|v| SeedStat::of(&v))
    };
    Ok(MetricSummary {
        runs: reports.len(),
        kappa: pick(|r| r.kappa),
        bacc: pick(|r| r.bacc),
        wf1: pick(|r| r.wf1),
        auroc: opt(|r| r.auroc),
        auprc: opt(|r| r.auprc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_and_summary() {
        let probs = [0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7];
        let r = MetricReport::from_probs(&probs, &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(r.bacc, 1.0);
        assert_eq!(r.auroc, Some(1.0));
        let json = serde_json::to_value(&r).unwrap();
        for key in ["kappa", "bacc", "wf1", "auroc", "auprc", "confusion"] {
            assert!(json.get(key).is_some());
        }
        let s = summarize(&[r.clone(), MetricReport { bacc: 0.5, ..r }]).unwrap();
        assert!((s.bacc.mean - 0.75).abs() < 1e-12);
        assert!((s.bacc.std - 0.125f64.sqrt()).abs() < 1e-12);
        assert_eq!(SeedStat::of(&[0.3]).std, 0.0);
        let three = MetricReport::from_probs(&[0.2, 0.5, 0.3], &[1], 3).unwrap();
        assert_eq!(three.auroc, None);
    }
}
