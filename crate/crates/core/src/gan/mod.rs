//! Adversarial background models: latent sampling, losses, training and checkpoints.

mod checkpoint;
mod train;

pub use checkpoint::{Checkpoint, Modality, CHECKPOINT_FORMAT_VERSION};
pub use train::{
    discriminator_batch_grads, generator_batch_grads, train, train_with, write_loss_csv, EpochLoss, TrainConfig,
    Trained,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::nn::{Discriminator, Generator};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// A generator input `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    /// Components drawn independently from U(-1, 1).
    pub fn sample(dim: usize, rng: &mut impl Rng) -> Self {
        Self((0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("latent vector has non-finite components".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn clamp_to_support(&mut self) {
        self.0.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    }

    pub fn distance(&self, other: &LatentVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// `G(z)` as a frame.
pub fn generator_forward(g: &Generator, z: &LatentVector) -> Result<Frame> {
    Ok(Frame::clamped(g.forward(z.values())?))
}

/// `D(x)` (probability of the real class) and the feature-layer activation `l(x)`.
pub fn discriminator_forward(d: &Discriminator, x: &Frame) -> Result<(f64, Tensor)> {
    d.forward(x.tensor())
}

/// `-[log D(x) + log(1 - D(G(z)))]`, minimized by the discriminator.
pub fn discriminator_loss(d_real: f64, d_fake: f64) -> f64 {
    -(clamp_probability(d_real).ln() + (1.0 - clamp_probability(d_fake)).ln())
}

/// Non-saturating generator loss `-log D(G(z))`.
pub fn generator_loss(d_fake: f64) -> f64 {
    -clamp_probability(d_fake).ln()
}
