use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleKind;
use crate::error::{ensure, Result};

/// Which gated path a latent tap reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TapKind {
    #[default]
    Gate,
    Filter,
}

/// Where along the path the tap sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TapPoint {
    /// After the conditioning is added, before the nonlinearity.
    #[default]
    Pre,
    /// Raw bidirectional SSM output.
    Ssm,
}

impl std::str::FromStr for TapKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gate" => Ok(TapKind::Gate),
            "filter" => Ok(TapKind::Filter),
            other => Err(crate::Error::Config(format!("unknown tap kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmdpConfig {
    pub n_layers: usize,
    pub residual_channels: usize,
    pub gate_channels: usize,
    pub filter_channels: usize,
    pub state_dim: usize,
    pub embed_dim: usize,
    /// Size of the channel-embedding table.
    pub num_channels: usize,
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub tap_point: TapPoint,
}

impl Default for SsmdpConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl SsmdpConfig {
    pub fn paper() -> Self {
        Self {
            n_layers: 20,
            residual_channels: 128,
            gate_channels: 128,
            filter_channels: 128,
            state_dim: 128,
            embed_dim: 128,
            num_channels: 22,
            steps: 50,
            schedule: ScheduleKind::default(),
            tap_point: TapPoint::default(),
        }
    }

    /// Small configuration with `width` channels everywhere.
    pub fn tiny(n_layers: usize, width: usize, state_dim: usize, num_channels: usize) -> Self {
        Self {
            n_layers,
            residual_channels: width,
            gate_channels: width,
            filter_channels: width,
            state_dim,
            embed_dim: width,
            num_channels,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_layers > 0
                && self.residual_channels > 0
                && self.gate_channels > 0
                && self.state_dim > 0
                && self.embed_dim > 0
                && self.num_channels > 0
                && self.steps > 0,
            Config,
            "backbone dimensions must be positive"
        );
        ensure!(
            self.gate_channels == self.filter_channels,
            Config,
            "gate ({}) and filter ({}) widths must match",
            self.gate_channels,
            self.filter_channels
        );
        ensure!(self.embed_dim % 2 == 0, Config, "embedding width must be even, got {}", self.embed_dim);
        Ok(())
    }

    /// Trainable parameters implied by the configuration.
    pub fn param_count(&self) -> usize {
        let (r, h, n, e) = (self.residual_channels, self.gate_channels, self.state_dim, self.embed_dim);
        let linear = |i: usize, o: usize| i * o + o;
        let bank = 2 * (2 * h) * (3 * n + 2);
        let block = linear(r, 2 * h) + bank + linear(e, 2 * h) + linear(h, 2 * r);
        linear(1, r) + self.num_channels * e + self.n_layers * block + linear(r, r) + linear(r, 1)
    }
}
