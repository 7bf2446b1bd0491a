use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `counts[true][pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        ensure!(k > 0 && counts.iter().all(|r| r.len() == k), Shape, "confusion matrix must be square");
        Ok(Self { counts })
    }

    pub fn from_predictions(labels: &[usize], preds: &[usize], k: usize) -> Result<Self> {
        ensure!(labels.len() == preds.len(), Shape, "{} labels for {} predictions", labels.len(), preds.len());
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in labels.iter().zip(preds) {
            ensure!(t < k && p < k, InvalidArgument, "class index out of range for {k} classes");
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        trace as f64 / self.total().max(1) as f64
    }

    pub fn cohen_kappa(&self) -> f64 {
        let n = self.total() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let po = self.accuracy();
        let pe = (0..self.classes()).map(|i| self.row(i) as f64 * self.col(i) as f64).sum::<f64>() / (n * n);
        if (1.0 - pe).abs() < 1e-15 {
            0.0
        } else {
            (po - pe) / (1.0 - pe)
        }
    }

    /// Mean per-class recall over classes that occur.
    pub fn balanced_accuracy(&self) -> f64 {
        let mut recalls = Vec::new();
        for i in 0..self.classes() {
            let r = self.row(i);
            if r == 0 {
                log::warn!("class {i} has no samples and is left out of balanced accuracy");
            } else {
                recalls.push(self.counts[i][i] as f64 / r as f64);
            }
        }
        if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().sum::<f64>() / recalls.len() as f64
        }
    }

    pub fn f1(&self, i: usize) -> f64 {
        let tp = self.counts[i][i] as f64;
        let (r, c) = (self.row(i) as f64, self.col(i) as f64);
        if r + c == 0.0 {
            0.0
        } else {
            2.0 * tp / (r + c)
        }
    }

    pub fn weighted_f1(&self) -> f64 {
        let n = self.total() as f64;
        if n == 0.0 {
            return 0.0;
        }
        (0..self.classes()).map(|i| self.row(i) as f64 / n * self.f1(i)).sum()
    }
}
