use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use foregan::data::synth::{render, SceneParams};
use foregan::gan::discriminator_batch_grads;
use foregan::nn::{Discriminator, NetConfig};
use foregan::segment::{segment_sequence, OracleBackground, PipelineConfig};
use foregan::{Exec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn discriminator_batch(c: &mut Criterion) {
    let cfg = NetConfig {
        image_size: 32,
        latent_dim: 32,
        base_width: 16,
        layers: 4,
        ..NetConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = Discriminator::new(cfg, &mut rng).unwrap();
    let batch: Vec<Tensor> = (0..32)
        .map(|_| Tensor::from_vec(3, 32, 32, (0..3 * 32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let (real, fake) = batch.split_at(16);
    let real: Vec<&Tensor> = real.iter().collect();
    let fake: Vec<&Tensor> = fake.iter().collect();
    let mut group = c.benchmark_group("discriminator_batch_grads");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(discriminator_batch_grads(&d, &real, &fake, exec).unwrap()))
        });
    }
    group.finish();
}

fn oracle_segmentation(c: &mut Criterion) {
    let p = SceneParams {
        frames: 16,
        absent_frames: 2,
        ..SceneParams::default()
    };
    let seq = render(5, &p).unwrap().to_sequence("bench").unwrap();
    let rgb = OracleBackground::rgb(&seq).unwrap();
    let depth = OracleBackground::depth(&seq).unwrap();
    let idx: Vec<usize> = (0..seq.len()).collect();
    let cfg = PipelineConfig::default();
    let mut group = c.benchmark_group("segment_sequence_oracle");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(segment_sequence(&seq, &idx, &rgb, Some(&depth), &cfg, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, discriminator_batch, oracle_segmentation);
criterion_main!(benches);
