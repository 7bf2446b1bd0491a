//! Classification metrics.

mod confusion;
mod ranking;
mod report;

pub use confusion::{argmax, ConfusionMatrix};
pub use ranking::{auroc_auprc, auroc_pairwise};
pub use report::{summarize, MetricReport, MetricSummary, SeedStat};
