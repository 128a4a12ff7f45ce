use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{discriminator_loss, generator_loss, Checkpoint, LatentVector, Modality, PROB_EPS};
use crate::data::Frame;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{Adam, DiscTrace, Discriminator, GenTrace, Generator, NetConfig, ParamGrads, Parameterized};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub model: NetConfig,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            model: NetConfig::default(),
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Parameter("Adam moment coefficients must lie in [0, 1)".into()));
        }
        self.model.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub losses: Vec<EpochLoss>,
}

// Per-sample work is grouped into a fixed number of contiguous chunks so the
// floating-point reduction order never depends on the worker count.
const MAX_CHUNKS: usize = 8;

fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    let k = n.clamp(1, MAX_CHUNKS);
    (0..k).map(|i| (i * n / k)..((i + 1) * n / k)).collect()
}

fn reduce(parts: Vec<(f64, ParamGrads)>, n: usize) -> (f64, ParamGrads) {
    let mut it = parts.into_iter();
    let (mut loss, mut grads) = it.next().expect("at least one chunk");
    for (l, g) in it {
        loss += l;
        grads.add_assign(&g);
    }
    let inv = 1.0 / n as f64;
    grads.scale(inv);
    (loss * inv, grads)
}

/// dL/dlogits of `-log clamp(p_real)`; zero where the clamp is active.
fn real_term_grad(t: &DiscTrace) -> Option<[f64; 2]> {
    let [p0, p1] = t.probs();
    (PROB_EPS..=1.0 - PROB_EPS).contains(&p0).then_some([p0 - 1.0, p1])
}

/// dL/dlogits of `-log(1 - clamp(p_real))`.
fn fake_term_grad(t: &DiscTrace) -> Option<[f64; 2]> {
    let [p0, p1] = t.probs();
    (PROB_EPS..=1.0 - PROB_EPS).contains(&p0).then_some([p0, p1 - 1.0])
}

/// Mean discriminator loss over `(real[i], fake[i])` pairs and its gradient
/// w.r.t. the discriminator parameters.
pub fn discriminator_batch_grads(
    d: &Discriminator,
    real: &[&Tensor],
    fake: &[&Tensor],
    exec: Exec,
) -> Result<(f64, ParamGrads)> {
    assert_eq!(real.len(), fake.len());
    let n = real.len();
    let parts = exec.map(&chunk_ranges(n), |range| -> Result<(f64, ParamGrads)> {
        let mut grads = d.zero_grads();
        let mut loss = 0.0;
        for i in range.clone() {
            let tr = d.forward_trace(real[i])?;
            let tf = d.forward_trace(fake[i])?;
            loss += discriminator_loss(tr.real_probability(), tf.real_probability());
            if let Some(gl) = real_term_grad(&tr) {
                d.backward(&tr, gl, false, Some(&mut grads));
            }
            if let Some(gl) = fake_term_grad(&tf) {
                d.backward(&tf, gl, false, Some(&mut grads));
            }
        }
        Ok((loss, grads))
    });
    Ok(reduce(parts.into_iter().collect::<Result<Vec<_>>>()?, n))
}

/// Mean non-saturating generator loss over generator traces and its
/// gradient w.r.t. the generator parameters (discriminator frozen).
pub fn generator_batch_grads(
    g: &Generator,
    d: &Discriminator,
    traces: &[GenTrace],
    exec: Exec,
) -> Result<(f64, ParamGrads)> {
    let n = traces.len();
    let parts = exec.map(&chunk_ranges(n), |range| -> Result<(f64, ParamGrads)> {
        let mut grads = g.zero_grads();
        let mut loss = 0.0;
        for trace in &traces[range.clone()] {
            let td = d.forward_trace(trace.output())?;
            loss += generator_loss(td.real_probability());
            if let Some(gl) = real_term_grad(&td) {
                let gimg = d.backward(&td, gl, true, None).expect("input gradient");
                g.backward(trace, &gimg, Some(&mut grads));
            }
        }
        Ok((loss, grads))
    });
    Ok(reduce(parts.into_iter().collect::<Result<Vec<_>>>()?, n))
}

/// Trains a fresh generator/discriminator pair on `data`.
pub fn train(data: &[Frame], config: &TrainConfig) -> Result<Trained> {
    train_with(data, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(data: &[Frame], config: &TrainConfig, mut on_epoch: impl FnMut(&EpochLoss)) -> Result<Trained> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    let net = &config.model;
    let want = (net.channels, net.image_size, net.image_size);
    if let Some(f) = data.iter().find(|f| f.tensor().shape() != want) {
        return Err(Error::Shape(format!(
            "training frame {:?} does not match model input {want:?}",
            f.tensor().shape()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut g = Generator::new(net.clone(), &mut rng)?;
    let mut d = Discriminator::new(net.clone(), &mut rng)?;
    let mut opt_g = Adam::new(config.learning_rate, config.beta1, config.beta2, &g.param_sizes());
    let mut opt_d = Adam::new(config.learning_rate, config.beta1, config.beta2, &d.param_sizes());
    let exec = config.exec;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut d_sum, mut g_sum, mut batches) = (0.0, 0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let zs: Vec<LatentVector> = (0..batch.len())
                .map(|_| LatentVector::sample(net.latent_dim, &mut rng))
                .collect();
            let traces = exec
                .map(&zs, |z| g.forward_trace(z.values()))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let real: Vec<&Tensor> = batch.iter().map(|&i| data[i].tensor()).collect();
            let fake: Vec<&Tensor> = traces.iter().map(GenTrace::output).collect();

            let (d_loss, d_grads) = discriminator_batch_grads(&d, &real, &fake, exec)?;
            if !d_loss.is_finite() || !d_grads.all_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("discriminator loss {d_loss}"),
                });
            }
            opt_d.step(d.param_buffers_mut(), &d_grads.0);

            let (g_loss, g_grads) = generator_batch_grads(&g, &d, &traces, exec)?;
            if !g_loss.is_finite() || !g_grads.all_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("generator loss {g_loss}"),
                });
            }
            opt_g.step(g.param_buffers_mut(), &g_grads.0);

            d_sum += d_loss;
            g_sum += g_loss;
            batches += 1;
        }
        let rec = EpochLoss {
            epoch,
            d_loss: d_sum / batches as f64,
            g_loss: g_sum / batches as f64,
        };
        debug!("epoch {epoch}: d_loss {:.4} g_loss {:.4}", rec.d_loss, rec.g_loss);
        on_epoch(&rec);
        losses.push(rec);
    }
    if let Some(last) = losses.last() {
        info!(
            "trained {} epochs on {} frames: d_loss {:.4} g_loss {:.4}",
            config.epochs,
            data.len(),
            last.d_loss,
            last.g_loss
        );
    }
    Ok(Trained {
        checkpoint: Checkpoint::new(g, d, config.clone(), Modality::Rgb, "unnamed", config.epochs),
        losses,
    })
}

pub fn write_loss_csv(path: &Path, losses: &[EpochLoss]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,d_loss,g_loss")?;
    for l in losses {
        writeln!(f, "{},{},{}", l.epoch, l.d_loss, l.g_loss)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn tiny() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 5,
            model: NetConfig {
                image_size: 8,
                latent_dim: 4,
                base_width: 2,
                layers: 2,
                ..NetConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn data(n: usize) -> Vec<Frame> {
        (0..n)
            .map(|i| Frame::clamped(Tensor::filled(3, 8, 8, (i as f64 / n as f64) - 0.5)))
            .collect()
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig { epochs: 0, ..tiny() };
        assert!(matches!(train(&data(4), &cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn empty_or_misshaped_data_rejected() {
        assert!(matches!(train(&[], &tiny()), Err(Error::Parameter(_))));
        let bad = vec![Frame::zeros(3, 4, 4)];
        assert!(matches!(train(&bad, &tiny()), Err(Error::Shape(_))));
    }

    #[test]
    fn deterministic_and_mode_independent() {
        let a = train(&data(10), &tiny()).unwrap();
        let b = train(&data(10), &tiny()).unwrap();
        let seq = TrainConfig {
            exec: Exec::Sequential,
            ..tiny()
        };
        let c = train(&data(10), &seq).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.checkpoint.generator, c.checkpoint.generator);
        assert_eq!(a.checkpoint.discriminator, c.checkpoint.discriminator);
        assert_eq!(a.losses.len(), 2);
        assert_eq!(a.losses, c.losses);
    }

    #[test]
    fn loss_csv_has_one_row_per_epoch() {
        let t = train(&data(6), &tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_loss_csv(&p, &t.losses).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,d_loss,g_loss");
        assert_eq!(lines.len(), 3);
    }
}
