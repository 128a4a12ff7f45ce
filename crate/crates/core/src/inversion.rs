//! Latent inversion: find `z` such that `G(z)` matches a target frame.
//!
//! The objective is a weighted sum of the pixel-space L1 residual and the
//! L1 distance between discriminator features of the target and of `G(z)`.
//! Only `z` is optimized; both networks stay frozen.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::gan::LatentVector;
use crate::nn::{Adam, Discriminator, Generator};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentOptimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    /// Number of gradient steps on `z`.
    pub steps: usize,
    pub step_size: f64,
    /// Weight of the feature-matching term; the residual term gets `1 - eta`.
    pub eta: f64,
    /// Seed for the initial `z` of each restart.
    pub seed: u64,
    pub restarts: usize,
    pub optimizer: LatentOptimizer,
    /// Start each frame from the previous frame's solution.
    pub warm_start: bool,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            step_size: 0.01,
            eta: 0.1,
            seed: 0,
            restarts: 1,
            optimizer: LatentOptimizer::Adam,
            warm_start: false,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Parameter("inversion needs at least one step".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Parameter(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Parameter("step size must be positive".into()));
        }
        if self.restarts < 1 {
            return Err(Error::Parameter("at least one restart is required".into()));
        }
        Ok(())
    }
}

/// Loss components evaluated at one iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub residual: f64,
    pub feature: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    pub z: LatentVector,
    pub generated: Frame,
    pub trajectory: Vec<StepLoss>,
    /// Step at which the returned (lowest-loss) iterate was evaluated.
    pub best_step: usize,
    /// Loss had plateaued (< 0.1% relative change over the last tenth of the run).
    pub converged: bool,
}

impl InversionResult {
    pub fn best(&self) -> &StepLoss {
        &self.trajectory[self.best_step]
    }
}

/// Sum of absolute differences between two equally shaped tensors.
pub fn l1_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.ensure_same_shape(b, "l1 distance")?;
    Ok(a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).sum())
}

/// `Σ |x − G(z)|` over all pixels and channels.
pub fn residual_loss(x: &Frame, gz: &Frame) -> Result<f64> {
    l1_distance(x.tensor(), gz.tensor())
}

/// `Σ |l(x) − l(G(z))|` over the discriminator's feature layer.
pub fn feature_matching_loss(d: &Discriminator, x: &Frame, gz: &Frame) -> Result<f64> {
    x.tensor().ensure_same_shape(gz.tensor(), "feature matching")?;
    l1_distance(&d.features(x.tensor())?, &d.features(gz.tensor())?)
}

/// `(1 − η)·residual + η·feature`.
pub fn combined_loss(residual: f64, feature: f64, eta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Parameter(format!("eta {eta} outside [0, 1]")));
    }
    Ok((1.0 - eta) * residual + eta * feature)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Target-side quantities reused across iterations.
pub struct InversionTarget<'a> {
    x: &'a Frame,
    features: Tensor,
}

impl<'a> InversionTarget<'a> {
    pub fn new(d: &Discriminator, x: &'a Frame) -> Result<Self> {
        Ok(Self {
            x,
            features: d.features(x.tensor())?,
        })
    }
}

/// Objective at `z` and its gradient with respect to `z`.
pub fn objective_and_gradient(
    g: &Generator,
    d: &Discriminator,
    target: &InversionTarget<'_>,
    z: &[f64],
    eta: f64,
) -> Result<(StepLoss, Vec<f64>)> {
    let trace = g.forward_trace(z)?;
    let gz = trace.output();
    let x = target.x.tensor();
    x.ensure_same_shape(gz, "inversion target vs generator output")?;
    let residual = l1_distance(x, gz)?;
    let mut grad_img = gz.map(|_| 0.0);
    for ((gi, &p), &q) in grad_img.data_mut().iter_mut().zip(gz.data()).zip(x.data()) {
        *gi = (1.0 - eta) * sign(p - q);
    }
    let feature = if eta > 0.0 {
        let (inputs, pre, fgz) = d.features_trace(gz)?;
        let feature = l1_distance(&fgz, &target.features)?;
        let gf = Tensor::from_vec(
            fgz.channels(),
            fgz.height(),
            fgz.width(),
            fgz.data()
                .iter()
                .zip(target.features.data())
                .map(|(p, q)| eta * sign(p - q))
                .collect(),
        )?;
        let back = d.features_backward(&inputs, &pre, &gf);
        for (a, b) in grad_img.data_mut().iter_mut().zip(back.data()) {
            *a += b;
        }
        feature
    } else {
        l1_distance(&d.features(gz)?, &target.features)?
    };
    let total = combined_loss(residual, feature, eta)?;
    let grad_z = g.backward(&trace, &grad_img, None);
    Ok((
        StepLoss {
            step: 0,
            residual,
            feature,
            total,
        },
        grad_z,
    ))
}

/// Runs one optimization from the given initial `z`.
pub fn invert_from(
    g: &Generator,
    d: &Discriminator,
    x: &Frame,
    config: &InversionConfig,
    z0: LatentVector,
) -> Result<InversionResult> {
    config.validate()?;
    if z0.dim() != g.config().latent_dim {
        return Err(Error::Shape(format!(
            "initial z has {} components, generator expects {}",
            z0.dim(),
            g.config().latent_dim
        )));
    }
    let target = InversionTarget::new(d, x)?;
    let mut z = z0;
    let mut adam = Adam::new(config.step_size, 0.9, 0.999, &[z.dim()]);
    let mut trajectory = Vec::with_capacity(config.steps);
    let mut best: Option<(f64, usize, LatentVector)> = None;
    for step in 0..config.steps {
        let (mut loss, grad) = objective_and_gradient(g, d, &target, z.values(), config.eta)?;
        loss.step = step;
        if !loss.total.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Inversion {
                step,
                reason: format!("non-finite loss {}", loss.total),
            });
        }
        trajectory.push(loss);
        if best.as_ref().is_none_or(|(b, _, _)| loss.total < *b) {
            best = Some((loss.total, step, z.clone()));
        }
        if step + 1 < config.steps {
            match config.optimizer {
                LatentOptimizer::Adam => adam.step([z.values_mut()], std::slice::from_ref(&grad)),
                LatentOptimizer::Sgd => {
                    for (v, gr) in z.values_mut().iter_mut().zip(&grad) {
                        *v -= config.step_size * gr;
                    }
                }
            }
            z.clamp_to_support();
        }
    }
    let (_, best_step, z) = best.expect("at least one step");
    let generated = Frame::clamped(g.forward(z.values())?);
    let tail = (config.steps / 10).max(1);
    let converged = config.steps > tail && {
        let a = trajectory[config.steps - 1 - tail].total;
        let b = trajectory[config.steps - 1].total;
        (a - b).abs() <= 1e-3 * a.abs().max(1e-12)
    };
    Ok(InversionResult {
        z,
        generated,
        trajectory,
        best_step,
        converged,
    })
}

/// Inverts `x` from seeded uniform initializations, keeping the best restart.
pub fn invert(g: &Generator, d: &Discriminator, x: &Frame, config: &InversionConfig) -> Result<InversionResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<InversionResult> = None;
    for _ in 0..config.restarts {
        let z0 = LatentVector::sample(g.config().latent_dim, &mut rng);
        let r = invert_from(g, d, x, config, z0)?;
        if best.as_ref().is_none_or(|b| r.best().total < b.best().total) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn write_trajectory_csv(path: &Path, trajectory: &[StepLoss]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,residual,feature,total")?;
    for s in trajectory {
        writeln!(f, "{},{},{},{}", s.step, s.residual, s.feature, s.total)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::generator_forward;
    use crate::nn::{NetConfig, Parameterized};

    fn nets(seed: u64) -> (Generator, Discriminator) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = NetConfig {
            image_size: 8,
            latent_dim: 5,
            base_width: 3,
            layers: 2,
            ..NetConfig::default()
        };
        (
            Generator::new(cfg.clone(), &mut rng).unwrap(),
            Discriminator::new(cfg, &mut rng).unwrap(),
        )
    }

    #[test]
    fn residual_examples() {
        let x = Frame::clamped(Tensor::filled(1, 2, 2, 1.0));
        let z = Frame::zeros(1, 2, 2);
        assert_eq!(residual_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(residual_loss(&x, &z).unwrap(), 4.0);
        assert_eq!(residual_loss(&z, &x).unwrap(), residual_loss(&x, &z).unwrap());
        assert!(matches!(residual_loss(&x, &Frame::zeros(1, 2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn feature_distance_of_constant_offset() {
        let a = Tensor::filled(2, 2, 2, 0.25);
        let b = Tensor::filled(2, 2, 2, 0.75);
        assert_eq!(l1_distance(&a, &b).unwrap(), 4.0);
    }

    #[test]
    fn feature_matching_identity_and_sign() {
        let (g, d) = nets(1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = generator_forward(&g, &LatentVector::sample(5, &mut rng)).unwrap();
        let y = generator_forward(&g, &LatentVector::sample(5, &mut rng)).unwrap();
        assert_eq!(feature_matching_loss(&d, &x, &x).unwrap(), 0.0);
        assert!(feature_matching_loss(&d, &x, &y).unwrap() >= 0.0);
    }

    #[test]
    fn combined_examples() {
        assert_eq!(combined_loss(2.0, 4.0, 0.0).unwrap(), 2.0);
        assert_eq!(combined_loss(2.0, 4.0, 1.0).unwrap(), 4.0);
        assert!((combined_loss(2.0, 4.0, 0.1).unwrap() - 2.2).abs() < 1e-12);
        assert!(combined_loss(1.0, 1.0, 1.5).is_err());
        assert!(combined_loss(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn fixed_point_returns_start() {
        let (g, d) = nets(2);
        let z_star = LatentVector::sample(5, &mut ChaCha8Rng::seed_from_u64(3));
        let x = generator_forward(&g, &z_star).unwrap();
        let cfg = InversionConfig {
            steps: 20,
            ..InversionConfig::default()
        };
        let r = invert_from(&g, &d, &x, &cfg, z_star.clone()).unwrap();
        assert_eq!(r.trajectory[0].total, 0.0);
        assert_eq!(r.best_step, 0);
        assert_eq!(r.z, z_star);
    }

    #[test]
    fn single_step_and_invariants() {
        let (g, d) = nets(5);
        let x = Frame::clamped(Tensor::filled(3, 8, 8, 0.3));
        let before = (g.checksum(), d.checksum());
        let one = invert(
            &g,
            &d,
            &x,
            &InversionConfig {
                steps: 1,
                ..InversionConfig::default()
            },
        )
        .unwrap();
        assert_eq!(one.trajectory.len(), 1);
        let cfg = InversionConfig {
            steps: 60,
            restarts: 2,
            eta: 0.3,
            ..InversionConfig::default()
        };
        let r = invert(&g, &d, &x, &cfg).unwrap();
        assert_eq!((g.checksum(), d.checksum()), before);
        let min = r.trajectory.iter().map(|s| s.total).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best().total, min);
        for s in &r.trajectory {
            let t = combined_loss(s.residual, s.feature, cfg.eta).unwrap();
            assert!((t - s.total).abs() < 1e-6);
        }
        assert_eq!(r.generated, generator_forward(&g, &r.z).unwrap());
        assert_eq!(invert(&g, &d, &x, &cfg).unwrap(), r);
    }

    #[test]
    fn rejects_bad_config() {
        let (g, d) = nets(1);
        let x = Frame::zeros(3, 8, 8);
        for cfg in [
            InversionConfig { steps: 0, ..Default::default() },
            InversionConfig { eta: 1.2, ..Default::default() },
            InversionConfig { step_size: 0.0, ..Default::default() },
        ] {
            assert!(matches!(invert(&g, &d, &x, &cfg), Err(Error::Parameter(_))));
        }
        assert!(matches!(
            invert(&g, &d, &Frame::zeros(3, 4, 4), &InversionConfig { steps: 1, ..Default::default() }),
            Err(Error::Shape(_))
        ));
    }
}
