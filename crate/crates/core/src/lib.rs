//! Moving-object segmentation for RGB-D video.
//!
//! Per-scene adversarial background models (one for colour, one for depth)
//! are trained on background appearance. At test time the generator is
//! inverted by gradient descent on its latent input to synthesize the
//! background of each frame; residuals against the frame give foreground
//! masks, the depth mask is restricted to moving pixels found by optical
//! flow, and both modalities are fused.
//!
//! Module map:
//! - [`data`]: frames, dataset loading, augmentation, synthetic scenes
//! - [`gan`]: generator/discriminator training and checkpoints
//! - [`inversion`]: latent recovery with residual and feature-matching losses
//! - [`flow`]: dense optical flow and motion masks
//! - [`segment`]: the per-frame segmentation pipeline and fusion
//! - [`eval`]: confusion counts, precision/recall/F-measure, reports
//! - [`cli`]: the `foregan` command-line tool

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod flow;
pub mod gan;
pub mod inversion;
pub mod mask;
pub mod nn;
pub mod segment;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use mask::BinaryMask;
pub use tensor::Tensor;
