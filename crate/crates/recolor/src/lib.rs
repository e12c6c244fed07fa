//! Recurrent video colorization with temporal-consistency training.
//!
//! The crate colorizes grayscale frame sequences with a recurrent hybrid
//! generator (a U-Net mainstream fused with a global and a placeholder
//! feature extractor) trained against a patch critic, reconstruction,
//! perceptual, and optical-flow-based temporal objectives. Everything runs
//! on a self-contained f64 autodiff core so that training stays
//! bit-reproducible and gradients can be validated against finite
//! differences on desk-scale configurations.
//!
//! Module map:
//! - [`data`]: frames, clips, color conversion, PNG ingestion
//! - [`flow`]: flow fields, differentiable backward warping, occlusion masks, `.flo` I/O
//! - [`model`]: generator, patch critic, frozen perceptual net
//! - [`losses`]: reconstruction / perceptual / adversarial / temporal objectives
//! - [`metrics`]: PSNR, SSIM, warp error, directory evaluation
//! - [`synth`]: synthetic clips with analytically exact flow and occlusion
//! - [`train`]: two-stage schedule, Adam, checkpoints, logging
//! - [`ablation`]: named ablation settings and the comparison harness
//! - [`cli`]: command-line entry points

pub mod ablation;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod flow;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
