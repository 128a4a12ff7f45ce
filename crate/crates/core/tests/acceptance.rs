//! Acceptance suite: one line per criterion, `PASS` or `FAIL`.
//!
//! Runs without the libtest harness so every line is printed. Hard
//! criteria fail the process; the trained end-to-end target is reported
//! as a benchmark only.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Instant;

use foregan::data::synth::{render, SceneParams};
use foregan::data::{Frame, Sequence};
use foregan::eval::{aggregate, confusion, metrics, Aggregation, ConfusionCounts};
use foregan::flow::{estimate_flow, motion_mask, threshold_flow, FlowField};
use foregan::gan::{train, LatentVector, Modality, TrainConfig};
use foregan::inversion::{combined_loss, feature_matching_loss, invert_from, residual_loss, InversionConfig};
use foregan::nn::NetConfig;
use foregan::segment::{
    fuse, segment_sequence, BackgroundModel, FrameOutput, GanBackground, MaskModality, OracleBackground,
    PipelineConfig, SegmentationMask,
};
use foregan::{BinaryMask, Exec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, bool, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c1_metric_arithmetic() -> Outcome {
    let s = metrics(&ConfusionCounts { tp: 8, fp: 2, fn_: 2, tn: 0 });
    ensure(
        (s.precision, s.recall, s.f_measure) == (0.8, 0.8, 0.8),
        format!("got {s:?}"),
    )?;
    let zero = |tp, fp, fn_| metrics(&ConfusionCounts { tp, fp, fn_, tn: 3 });
    for (c, what) in [(zero(0, 0, 5), "no predictions"), (zero(0, 4, 0), "no GT"), (zero(0, 0, 0), "empty"), (zero(0, 2, 3), "no overlap")] {
        ensure(c.precision == 0.0 && c.recall == 0.0 && c.f_measure == 0.0, format!("{what}: {c:?}"))?;
    }
    Ok("P = R = F = 0.8 exactly; degenerate denominators give 0".into())
}

fn c2_loss_identities() -> Outcome {
    let (_, d) = common::tiny_nets(4);
    let x = Frame::new(common::random_image(5, 3, 8, 8)).map_err(|e| e.to_string())?;
    let r = residual_loss(&x, &x).map_err(|e| e.to_string())?;
    let f = feature_matching_loss(&d, &x, &x).map_err(|e| e.to_string())?;
    ensure(r == 0.0 && f == 0.0, format!("self losses {r} {f}"))?;
    for (res, feat) in [(2.0, 4.0), (0.37, 11.5), (1e3, 1e-3)] {
        ensure(combined_loss(res, feat, 0.0).unwrap() == res, "eta = 0 must return the residual")?;
        ensure(combined_loss(res, feat, 1.0).unwrap() == feat, "eta = 1 must return the feature loss")?;
    }
    let v = combined_loss(2.0, 4.0, 0.1).unwrap();
    ensure((v - 2.2).abs() <= 1e-12, format!("combined(2, 4, 0.1) = {v}"))?;
    Ok(format!("self-distances 0, eta boundaries exact, combined(2, 4, 0.1) = {v}"))
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 3];
    for seed in 1..=3 {
        worst[0] = worst[0].max(common::check_discriminator_loss(seed));
        worst[1] = worst[1].max(common::check_generator_loss(seed));
        for eta in [0.0, 0.1, 1.0] {
            worst[2] = worst[2].max(common::check_inversion_objective(seed, eta));
        }
    }
    let detail = format!(
        "max relative error D-loss {:.1e}, G-loss {:.1e}, inversion {:.1e} ({:.1?})",
        worst[0],
        worst[1],
        worst[2],
        start.elapsed()
    );
    ensure(worst.iter().all(|&e| e < 1e-4), detail.clone())?;
    Ok(detail)
}

/// Calibrated on the fixture below: five trials reach best losses of
/// 0.003 to 0.031 from starting losses of 3 to 11 (192 output values).
const INVERSION_TOLERANCE: f64 = 0.1;

fn c4_inversion_recovery() -> Outcome {
    let start = Instant::now();
    let seq = render(11, &SceneParams::scaled(8, 40)).map_err(|e| e.to_string())?.to_sequence("t").unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 8,
        seed: 2,
        model: common::tiny_config(),
        ..TrainConfig::default()
    };
    let trained = train(&seq.frames, &cfg).map_err(|e| e.to_string())?;
    let (g, d) = (&trained.checkpoint.generator, &trained.checkpoint.discriminator);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut worst: f64 = 0.0;
    for trial in 0..5 {
        let z_star = LatentVector::sample(g.config().latent_dim, &mut rng);
        let x = Frame::clamped(g.forward(z_star.values()).unwrap());
        let mut z0 = z_star.clone();
        for v in z0.values_mut() {
            *v += noise.sample(&mut rng);
        }
        z0.clamp_to_support();
        let icfg = InversionConfig {
            steps: 500,
            ..InversionConfig::default()
        };
        let r = invert_from(g, d, &x, &icfg, z0).map_err(|e| e.to_string())?;
        let min = r.trajectory.iter().map(|s| s.total).fold(f64::INFINITY, f64::min);
        ensure(r.best().total == min, format!("trial {trial}: returned loss is not the trajectory minimum"))?;
        let check = residual_loss(&x, &r.generated).unwrap() * 0.9
            + feature_matching_loss(d, &x, &r.generated).unwrap() * 0.1;
        ensure((check - r.best().total).abs() < 1e-9, format!("trial {trial}: returned frame does not match best loss"))?;
        worst = worst.max(min);
    }
    let detail = format!("worst best-loss {worst:.4} over 5 trials, tolerance {INVERSION_TOLERANCE} ({:.1?})", start.elapsed());
    ensure(worst < INVERSION_TOLERANCE, detail.clone())?;
    Ok(detail)
}

fn c5_threshold_rule() -> Outcome {
    let (h, w) = (16, 16);
    let u = (0..h * w).map(|i| if i % w < w / 2 { 0.0 } else { 2.0 }).collect();
    let flow = FlowField::new(h, w, u, vec![0.0; h * w]).unwrap();
    let m = motion_mask(&flow).map_err(|e| e.to_string())?;
    ensure(m.threshold_used == 1.0, format!("T = {}", m.threshold_used))?;
    ensure(m.mask == BinaryMask::from_fn(h, w, |_, x| x < w / 2), "mask is not the left half")?;
    ensure(threshold_flow(&flow, m.threshold_used) == m.mask, "re-applying the threshold differs")?;
    let scene = render(1, &SceneParams::default()).unwrap().to_sequence("s").unwrap();
    let f = &scene.frames[20];
    let still = motion_mask(&estimate_flow(f, f).unwrap()).unwrap();
    ensure(still.degenerate && still.mask.count_ones() == 64 * 64, "identical frames are not all static")?;
    Ok("T = 1 with exact left-half static mask; identical frames give the all-static mask".into())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn interior(values: &[f64], n: usize, margin: usize) -> Vec<f64> {
    (margin..n - margin)
        .flat_map(|y| (margin..n - margin).map(move |x| y * n + x))
        .map(|i| values[i])
        .collect()
}

fn c6_flow_soundness() -> Outcome {
    let n = 64;
    let pattern = |dx: f64| {
        let f = |y: f64, x: f64| 0.4 * (0.37 * x + 0.21 * y).sin() + 0.35 * (0.19 * x - 0.43 * y + 0.5).cos();
        let data = (0..3 * n * n)
            .map(|i| {
                let (y, x) = ((i % (n * n)) / n, i % n);
                f(y as f64, x as f64 - dx)
            })
            .collect();
        Frame::new(Tensor::from_vec(3, n, n, data).unwrap()).unwrap()
    };
    let checker = |dy: usize| {
        let data = (0..3 * n * n)
            .map(|i| {
                let (y, x) = ((i % (n * n)) / n, i % n);
                if ((y + n - dy) / 8 + x / 8).is_multiple_of(2) {
                    0.6
                } else {
                    -0.6
                }
            })
            .collect();
        Frame::new(Tensor::from_vec(3, n, n, data).unwrap()).unwrap()
    };
    let a = estimate_flow(&pattern(0.0), &pattern(1.0)).unwrap();
    let (au, av) = (median(interior(a.u(), n, 4)), median(interior(a.v(), n, 4)));
    let b = estimate_flow(&checker(0), &checker(2)).unwrap();
    let (bu, bv) = (median(interior(b.u(), n, 4)), median(interior(b.v(), n, 4)));
    let err_a = ((au - 1.0).powi(2) + av * av).sqrt();
    let err_b = (bu * bu + (bv - 2.0).powi(2)).sqrt();
    let detail = format!("(1, 0) -> ({au:.3}, {av:.3}); (0, 2) -> ({bu:.3}, {bv:.3})");
    ensure(err_a <= 0.25 && err_b <= 0.25, detail.clone())?;
    Ok(detail)
}

fn score(seq: &Sequence, out: &[FrameOutput], pick: impl Fn(&FrameOutput) -> Option<&BinaryMask>) -> f64 {
    let gt = seq.gt.as_ref().expect("ground truth");
    let counts: Vec<ConfusionCounts> = out
        .iter()
        .filter_map(|f| pick(f).map(|m| confusion(m, &gt[f.index]).unwrap()))
        .collect();
    aggregate(&counts, Aggregation::MeanOfFrames).unwrap().f_measure
}

fn modality_scores(seq: &Sequence, out: &[FrameOutput]) -> (f64, f64, f64) {
    (
        score(seq, out, |f| Some(&f.rgb.mask.mask)),
        score(seq, out, |f| f.depth.as_ref().map(|d| &d.mask.mask)),
        score(seq, out, |f| Some(&f.fused.mask)),
    )
}

fn c7_oracle_end_to_end() -> Outcome {
    let start = Instant::now();
    let seq = render(7, &SceneParams::default()).unwrap().to_sequence("shadow").unwrap();
    let rgb = OracleBackground::rgb(&seq).unwrap();
    let depth = OracleBackground::depth(&seq).unwrap();
    let idx: Vec<usize> = (0..seq.len()).collect();
    let out = segment_sequence(&seq, &idx, &rgb, Some(&depth), &PipelineConfig::default(), Exec::Parallel)
        .map_err(|e| e.to_string())?;
    let (r, d, f) = modality_scores(&seq, &out);
    let detail = format!("100 frames: rgb F {r:.4}, depth F {d:.4}, fused F {f:.4} ({:.1?})", start.elapsed());
    ensure(f >= 0.95 && r >= 0.90 && d >= 0.90, detail.clone())?;
    Ok(detail)
}

fn c8_trained_end_to_end() -> Outcome {
    let start = Instant::now();
    let seq = render(2024, &SceneParams::scaled(32, 100)).unwrap().to_sequence("scene").unwrap();
    let model = NetConfig {
        image_size: 32,
        latent_dim: 32,
        base_width: 8,
        layers: 4,
        ..NetConfig::default()
    };
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 16,
        seed: 1,
        model,
        ..TrainConfig::default()
    };
    let rgb = train(&seq.frames, &tc).map_err(|e| e.to_string())?;
    let depth_train = TrainConfig { seed: 2, ..tc.clone() };
    let depth = train(&seq.background_only_depth(), &depth_train).map_err(|e| e.to_string())?;
    let pc = PipelineConfig {
        inversion: InversionConfig {
            steps: 300,
            ..InversionConfig::default()
        },
        ..PipelineConfig::default()
    };
    let rgb_model = GanBackground::new(rgb.checkpoint.with_tags(Modality::Rgb, "scene"), pc.inversion.clone());
    let depth_model = GanBackground::new(depth.checkpoint.with_tags(Modality::Depth, "scene"), pc.inversion.clone());
    let idx: Vec<usize> = (0..seq.len()).collect();
    let models: (&dyn BackgroundModel, &dyn BackgroundModel) = (&rgb_model, &depth_model);
    let out = segment_sequence(&seq, &idx, models.0, Some(models.1), &pc, Exec::Parallel).map_err(|e| e.to_string())?;
    let (r, d, f) = modality_scores(&seq, &out);
    let detail = format!(
        "32x32, 200 epochs, 300 inversion steps: rgb F {r:.4}, depth F {d:.4}, fused F {f:.4} ({:.1?})",
        start.elapsed()
    );
    ensure(f >= 0.70, detail.clone())?;
    Ok(detail)
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c9_cli_determinism() -> Outcome {
    let run_cfg = r#"{
  "dataset": "data/dataset.json",
  "output": "out",
  "train": {"epochs": 3, "batch_size": 8, "model": {"image_size": 16, "latent_dim": 4, "base_width": 2, "layers": 2}},
  "pipeline": {"inversion": {"steps": 20}},
  "seed": 12
}"#;
    let commands: [&[&str]; 8] = [
        &["synth", "--dir", "data", "--size", "16", "--frames", "14", "--seed", "6"],
        &["train", "-c", "run.json", "--modality", "rgb"],
        &["train", "-c", "run.json", "--modality", "depth"],
        &["segment", "-c", "run.json"],
        &["eval", "-c", "run.json"],
        &["visualize", "-c", "run.json"],
        &["segment", "-c", "run.json", "--oracle", "--out", "oracle"],
        &["eval", "-c", "run.json", "--out", "oracle"],
    ];
    let mut rounds = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let ws = dir.path();
        let mut snaps = Vec::new();
        for args in commands {
            let status = Command::new(env!("CARGO_BIN_EXE_foregan"))
                .args(args)
                .current_dir(ws)
                .env_remove("FOREGAN_SEED")
                .env("RUST_LOG", "error")
                .stdout(Stdio::null())
                .status()
                .map_err(|e| e.to_string())?;
            ensure(status.success(), format!("{args:?} failed with {status}"))?;
            fs::write(ws.join("run.json"), run_cfg).unwrap();
            snaps.push(snapshot(ws));
        }
        rounds.push(snaps);
    }
    for (i, args) in commands.iter().enumerate() {
        if rounds[0][i] != rounds[1][i] {
            let (a, b) = (&rounds[0][i], &rounds[1][i]);
            let diff: Vec<&String> = a
                .keys()
                .chain(b.keys())
                .filter(|k| a.get(*k) != b.get(*k))
                .take(3)
                .collect();
            return Err(format!("{} differs on rerun: {diff:?}", args[0]));
        }
    }
    let files = rounds[0].last().map(|s| s.len()).unwrap_or(0);
    Ok(format!("synth, train x2, segment x2, eval x2, visualize byte-identical on rerun ({files} files)"))
}

fn c10_fusion_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..1000 {
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let density: f64 = rng.random();
        let mut draw = |modality| SegmentationMask {
            mask: BinaryMask::from_vec(h, w, (0..h * w).map(|_| rng.random_bool(density) as u8).collect()).unwrap(),
            modality,
        };
        let a = draw(MaskModality::Rgb);
        let b = draw(MaskModality::Depth);
        let f = fuse(&a, &b).map_err(|e| e.to_string())?;
        for i in 0..h * w {
            let want = a.mask.bits()[i] | b.mask.bits()[i];
            ensure(f.mask.bits()[i] == want, format!("trial {trial}: pixel {i} is not the OR"))?;
        }
        ensure(f.mask.and(&a.mask).unwrap() == a.mask, format!("trial {trial}: fused does not contain rgb"))?;
        ensure(f.mask.and(&b.mask).unwrap() == b.mask, format!("trial {trial}: fused does not contain depth"))?;
        ensure(f.modality == MaskModality::Fused, "modality tag")?;
    }
    Ok("1000 random pairs: fused = OR and contains both operands".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "metric arithmetic", true, c1_metric_arithmetic),
        (2, "loss identities", true, c2_loss_identities),
        (3, "gradient correctness", true, c3_gradients),
        (4, "inversion recovery", true, c4_inversion_recovery),
        (5, "motion mask threshold rule", true, c5_threshold_rule),
        (6, "flow soundness", true, c6_flow_soundness),
        (7, "oracle end-to-end", true, c7_oracle_end_to_end),
        (8, "trained end-to-end (soft target)", false, c8_trained_end_to_end),
        (9, "CLI determinism", true, c9_cli_determinism),
        (10, "fusion algebra", true, c10_fusion_algebra),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut hard_failures = 0;
    for (id, name, hard, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {id:>2} {name}: {detail}"),
            Err(detail) => {
                let tag = if hard { "" } else { " (not a gate)" };
                println!("FAIL criterion {id:>2} {name}{tag}: {detail}");
                if hard {
                    hard_failures += 1;
                }
            }
        }
    }
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
