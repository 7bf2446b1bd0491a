//! Diffusion-pretrained structured state-space representations for
//! multichannel biosignals.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: tensors, FFT, GEMM, a small reverse-mode tape and a
//!   finite-difference gradient checker.
//! - [`signal`]: companding, filtering, resampling, segmentation, the segment
//!   file format and the synthetic dataset generator.
//! - [`diffusion`]: noise schedules, forward process, velocity targets, the
//!   training loss and ancestral sampling.
//! - [`ssm`]: diagonal state-space layers (single layers and batched banks).
//! - [`backbone`]: the gated residual denoiser built from bidirectional SSMs.
//! - [`latent`]: temporal pooling of latent activities.
//! - [`attention`], [`lft`]: transformer primitives and the latent fusion
//!   classifier.
//! - [`training`], [`metrics`], [`checkpoint`]: optimisation, evaluation and
//!   persistence.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod diffusion;
mod error;
pub mod latent;
pub mod lft;
pub mod metrics;
pub mod numerics;
pub mod signal;
pub mod ssm;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Float, Module, Param, Tensor};
