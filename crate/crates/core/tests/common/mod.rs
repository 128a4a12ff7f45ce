#![allow(dead_code)]

use foregan::data::Frame;
use foregan::gan::{discriminator_batch_grads, discriminator_loss, generator_batch_grads, generator_loss};
use foregan::inversion::{combined_loss, objective_and_gradient, InversionTarget};
use foregan::nn::{Discriminator, Generator, NetConfig, Parameterized};
use foregan::{Exec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> NetConfig {
    NetConfig {
        image_size: 8,
        channels: 3,
        latent_dim: 4,
        base_width: 3,
        layers: 2,
        feature_layer: None,
    }
}

pub fn tiny_nets(seed: u64) -> (Generator, Discriminator) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Generator::new(tiny_config(), &mut rng).unwrap();
    let d = Discriminator::new(tiny_config(), &mut rng).unwrap();
    (g, d)
}

pub fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-0.9..0.9)).collect()).unwrap()
}

/// `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

const H: f64 = 1e-6;

/// Largest relative error between the analytic D-loss gradient and central differences.
pub fn check_discriminator_loss(seed: u64) -> f64 {
    let (g, mut d) = tiny_nets(seed);
    let real = random_image(seed + 100, 3, 8, 8);
    let fake = g.forward(&[0.3, -0.5, 0.7, 0.1]).unwrap();
    let (_, analytic) = discriminator_batch_grads(&d, &[&real], &[&fake], Exec::Sequential).unwrap();
    let loss = |d: &Discriminator| {
        discriminator_loss(d.forward(&real).unwrap().0, d.forward(&fake).unwrap().0)
    };
    let mut worst: f64 = 0.0;
    let sizes = d.param_sizes();
    for (b, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let orig = d.param_buffers()[b][i];
            d.param_buffers_mut()[b][i] = orig + H;
            let up = loss(&d);
            d.param_buffers_mut()[b][i] = orig - H;
            let down = loss(&d);
            d.param_buffers_mut()[b][i] = orig;
            worst = worst.max(rel_error(analytic.0[b][i], (up - down) / (2.0 * H)));
        }
    }
    worst
}

/// Same for the generator loss w.r.t. generator parameters.
pub fn check_generator_loss(seed: u64) -> f64 {
    let (mut g, d) = tiny_nets(seed);
    let z = [0.2, -0.4, 0.6, -0.1];
    let trace = g.forward_trace(&z).unwrap();
    let (_, analytic) = generator_batch_grads(&g, &d, &[trace], Exec::Sequential).unwrap();
    let loss = |g: &Generator| generator_loss(d.forward(&g.forward(&z).unwrap()).unwrap().0);
    let mut worst: f64 = 0.0;
    let sizes = g.param_sizes();
    for (b, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let orig = g.param_buffers()[b][i];
            g.param_buffers_mut()[b][i] = orig + H;
            let up = loss(&g);
            g.param_buffers_mut()[b][i] = orig - H;
            let down = loss(&g);
            g.param_buffers_mut()[b][i] = orig;
            worst = worst.max(rel_error(analytic.0[b][i], (up - down) / (2.0 * H)));
        }
    }
    worst
}

/// Same for the inversion objective w.r.t. `z`, computed from the loss
/// definitions rather than the optimizer's own objective.
pub fn check_inversion_objective(seed: u64, eta: f64) -> f64 {
    let (g, d) = tiny_nets(seed);
    let x = Frame::new(random_image(seed + 7, 3, 8, 8)).unwrap();
    let target = InversionTarget::new(&d, &x).unwrap();
    let z = vec![0.25, -0.35, 0.55, 0.05];
    let (_, analytic) = objective_and_gradient(&g, &d, &target, &z, eta).unwrap();
    let fx = d.features(x.tensor()).unwrap();
    let objective = |z: &[f64]| {
        let gz = g.forward(z).unwrap();
        let r: f64 = x.tensor().data().iter().zip(gz.data()).map(|(a, b)| (a - b).abs()).sum();
        let fg = d.features(&gz).unwrap();
        let f: f64 = fx.data().iter().zip(fg.data()).map(|(a, b)| (a - b).abs()).sum();
        combined_loss(r, f, eta).unwrap()
    };
    let mut worst: f64 = 0.0;
    for i in 0..z.len() {
        let mut zp = z.clone();
        zp[i] += H;
        let mut zm = z.clone();
        zm[i] -= H;
        worst = worst.max(rel_error(analytic[i], (objective(&zp) - objective(&zm)) / (2.0 * H)));
    }
    worst
}
