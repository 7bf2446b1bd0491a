//! Noise schedules, the forward process, velocity targets, the denoising
//! loss and ancestral sampling.

mod process;
mod sampler;
mod schedule;

pub use process::{
    diffusion_loss, extraction_input, forward_sample, velocity_loss_grad, velocity_target, DiffusionDraw,
    ExtractionMode,
};
pub use sampler::ancestral_sample;
pub use schedule::{
    cosine_schedule, cosine_schedule_on, linear_schedule, CosineGrid, NoiseSchedule, ScheduleKind, ALPHA_BAR_CLIP,
    COSINE_OFFSET,
};

use crate::{Float, Result};

/// A network that predicts the diffusion velocity of each row of `x`.
///
/// `x` holds `steps.len()` rows of `len` samples; row `r` is conditioned on
/// diffusion step `steps[r]` and channel id `channels[r]`.
pub trait VelocityModel<F: Float> {
    fn predict(&self, x: &[F], len: usize, steps: &[usize], channels: &[usize]) -> Result<Vec<F>>;
}
