//! Diagonal structured state-space layers.

mod bank;
pub mod kernel;
mod layer;

pub use bank::{BankCache, S4dBank};
pub use kernel::{PoleGrads, Poles};
pub use layer::{bidirectional_apply, S4dLayer, DT_MAX, DT_MIN};
