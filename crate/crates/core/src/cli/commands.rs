use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{Cli, Command, ModalitySelection, RunConfig, UsageError};
use crate::data::synth::render;
use crate::data::{
    augment, load_sequence, read_mask_png, write_frame_png, write_gray_png, write_mask_png, Challenge, DatasetSpec,
    Label, SceneParams, Sequence,
};
use crate::error::Error;
use crate::eval::{confusion, Aggregation, EvalReport, FrameEval, SequenceEval};
use crate::exec::Exec;
use crate::gan::{train_with, write_loss_csv, Checkpoint, Modality};
use crate::segment::{segment_sequence, BackgroundModel, FrameOutput, GanBackground, OracleBackground, PipelineConfig};

pub(super) fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            dir,
            name,
            size,
            frames,
            challenge,
        } => synth(&cli, dir, name, *size, *frames, *challenge),
        Command::Train { modality, epochs } => train(&cli, *modality, *epochs),
        Command::Segment { oracle, modality, steps } => segment(&cli, *oracle, *modality, *steps),
        Command::Eval { pred, aggregation } => eval(&cli, pred.as_deref(), *aggregation),
        Command::Visualize { frames } => visualize(&cli, *frames),
    }
}

fn settings(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = &cli.sequence {
        cfg.sequences = vec![s.clone()];
    }
    cfg.apply_seed();
    cfg.train.exec = exec(cli);
    Ok(cfg)
}

fn exec(cli: &Cli) -> Exec {
    if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn dataset(cfg: &RunConfig) -> Result<DatasetSpec> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| UsageError("no dataset given; pass --config or --dataset".into()))?;
    Ok(DatasetSpec::from_file(path)?)
}

fn subdirs(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::Load {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    Ok(names)
}

fn sequence_names(cfg: &RunConfig, spec: &DatasetSpec) -> Result<Vec<String>> {
    if !cfg.sequences.is_empty() {
        return Ok(cfg.sequences.clone());
    }
    let names: Vec<String> = subdirs(&spec.root)?
        .into_iter()
        .filter(|n| spec.sequence_dir(n).join(&spec.layout.rgb).is_dir())
        .collect();
    if names.is_empty() {
        return Err(Error::Config(format!("no sequences found under {}", spec.root.display())).into());
    }
    Ok(names)
}

fn frame_file(index: usize) -> String {
    format!("frame_{index:06}.png")
}

fn frame_index(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("frame_")?.parse().ok()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn synth(cli: &Cli, dir: &Path, name: &str, size: usize, frames: usize, challenge: Challenge) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let params = SceneParams {
        challenge,
        ..SceneParams::scaled(size, frames)
    };
    let scene = render(seed, &params)?;
    scene.write(dir, name)?;

    let mut spec = DatasetSpec::new(".", size);
    let category = serde_json::to_value(challenge)?.as_str().unwrap_or("none").to_string();
    spec.categories.insert(name.to_string(), category);
    write_json(&dir.join("dataset.json"), &spec)?;

    let mut run = RunConfig {
        dataset: Some(PathBuf::from("dataset.json")),
        seed,
        ..RunConfig::default()
    };
    run.train.model.image_size = size;
    run.train.model.layers = (1..=5).rev().find(|l| size.is_multiple_of(1 << l)).unwrap_or(1);
    run.augment.translations = vec![(2, 0), (0, 2)];
    run.augment.rotations_deg = vec![5.0];
    write_json(&dir.join("run.json"), &run)?;
    println!(
        "wrote {frames} frames of {size}x{size} scene {name:?} ({} background-only) to {}",
        scene.background_only_indices().len(),
        dir.display()
    );
    Ok(())
}

fn train(cli: &Cli, modality: Modality, epochs: Option<usize>) -> Result<()> {
    let mut cfg = settings(cli)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let spec = dataset(&cfg)?;
    for name in sequence_names(&cfg, &spec)? {
        let seq = load_sequence(&spec, &name)?;
        let base = match modality {
            Modality::Rgb => seq.frames.clone(),
            Modality::Depth => {
                if seq.depth_frames.is_none() {
                    return Err(UsageError(format!("sequence {name} has no depth frames")).into());
                }
                let bg = seq.background_only_depth();
                if bg.is_empty() {
                    return Err(UsageError(format!(
                        "sequence {name} has no background-only frames to train the depth model on"
                    ))
                    .into());
                }
                bg
            }
        };
        let data = augment(&base, &cfg.augment)?;
        log::info!("training {modality} model for {name} on {} frames", data.len());
        let trained = cfg.train.exec.install(cfg.workers, || {
            train_with(&data, &cfg.train, |l| {
                log::info!("epoch {} d_loss {:.5} g_loss {:.5}", l.epoch, l.d_loss, l.g_loss)
            })
        })?;
        let ckpt = trained.checkpoint.with_tags(modality, name.clone());
        let path = cfg.checkpoint_path(&name, modality);
        ckpt.save(&path)?;
        write_loss_csv(&path.with_extension("").with_extension("loss.csv"), &trained.losses)?;
        println!("{name}: {modality} checkpoint written to {}", path.display());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestFrame {
    index: usize,
    file: String,
    motion_threshold: f64,
    rgb_inversion_loss: Option<f64>,
    depth_inversion_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    sequence: String,
    category: String,
    modality: ModalitySelection,
    oracle: bool,
    seed: u64,
    height: usize,
    width: usize,
    models: BTreeMap<String, String>,
    /// Output kind → directory relative to the manifest.
    outputs: BTreeMap<String, String>,
    pipeline: PipelineConfig,
    frames: Vec<ManifestFrame>,
}

const MASK_DIRS: [&str; 3] = ["rgb", "depth", "fused"];
const STAGE_DIRS: [&str; 6] = ["motion", "masked", "background", "residual", "depth_background", "depth_residual"];

fn model_for(
    cfg: &RunConfig,
    seq: &Sequence,
    modality: Modality,
    oracle: bool,
) -> Result<Box<dyn BackgroundModel>> {
    if oracle {
        return Ok(match modality {
            Modality::Rgb => Box::new(OracleBackground::rgb(seq)?),
            Modality::Depth => Box::new(OracleBackground::depth(seq)?),
        });
    }
    let explicit = match modality {
        Modality::Rgb => cfg.pipeline.rgb_checkpoint.clone(),
        Modality::Depth => cfg.pipeline.depth_checkpoint.clone(),
    };
    let path = explicit.unwrap_or_else(|| cfg.checkpoint_path(&seq.name, modality));
    if !path.is_file() {
        return Err(UsageError(format!(
            "missing {modality} checkpoint {} (train first or pass --oracle)",
            path.display()
        ))
        .into());
    }
    let ckpt = Checkpoint::load(&path)?;
    let mut model = GanBackground::new(ckpt, cfg.pipeline.inversion.clone());
    model.source = Some(path);
    Ok(Box::new(model))
}

fn segment(cli: &Cli, oracle: bool, modality: Option<ModalitySelection>, steps: Option<usize>) -> Result<()> {
    let mut cfg = settings(cli)?;
    if let Some(m) = modality {
        cfg.modality = m;
    }
    if let Some(s) = steps {
        cfg.pipeline.inversion.steps = s;
    }
    cfg.pipeline.validate()?;
    let spec = dataset(&cfg)?;
    for name in sequence_names(&cfg, &spec)? {
        let seq = load_sequence(&spec, &name)?;
        let rgb = model_for(&cfg, &seq, Modality::Rgb, oracle)?;
        let depth = match cfg.modality {
            ModalitySelection::Rgbd => Some(model_for(&cfg, &seq, Modality::Depth, oracle)?),
            ModalitySelection::RgbOnly => None,
        };
        let indices: Vec<usize> = (0..seq.len()).collect();
        let exec = exec(cli);
        let outputs = exec.install(cfg.workers, || {
            segment_sequence(&seq, &indices, rgb.as_ref(), depth.as_deref(), &cfg.pipeline, exec)
        })?;

        let dir = cfg.masks_dir().join(&name);
        for sub in MASK_DIRS.iter().chain(&["intermediates"]) {
            let p = dir.join(sub);
            if p.is_dir() {
                fs::remove_dir_all(&p)?;
            }
        }
        let mut frames = Vec::with_capacity(outputs.len());
        for out in &outputs {
            frames.push(write_frame_outputs(&dir, out)?);
        }
        let mut models = BTreeMap::from([("rgb".to_string(), rgb.identity())]);
        if let Some(d) = &depth {
            models.insert("depth".into(), d.identity());
        }
        let mut outputs_map: BTreeMap<String, String> = MASK_DIRS.iter().map(|m| (m.to_string(), m.to_string())).collect();
        for s in STAGE_DIRS {
            outputs_map.insert(s.to_string(), format!("intermediates/{s}"));
        }
        let manifest = Manifest {
            sequence: name.clone(),
            category: spec.category(&name),
            modality: cfg.modality,
            oracle,
            seed: cfg.seed,
            height: seq.frames[0].height(),
            width: seq.frames[0].width(),
            models,
            outputs: outputs_map,
            pipeline: cfg.pipeline.clone(),
            frames,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        println!("{name}: {} frames segmented into {}", outputs.len(), dir.display());
    }
    Ok(())
}

fn write_frame_outputs(dir: &Path, out: &FrameOutput) -> Result<ManifestFrame> {
    let file = frame_file(out.index);
    let stage = |s: &str| dir.join("intermediates").join(s).join(&file);
    write_mask_png(&dir.join("rgb").join(&file), &out.rgb.mask.mask)?;
    write_mask_png(&dir.join("fused").join(&file), &out.fused.mask)?;
    write_mask_png(&stage("motion"), &out.rgb.motion.mask)?;
    write_frame_png(&stage("masked"), &out.rgb.masked_input)?;
    write_frame_png(&stage("background"), &out.rgb.background.frame)?;
    let r = &out.rgb.residual;
    write_gray_png(&stage("residual"), r.height(), r.width(), r.to_u8_image())?;
    if let Some(d) = &out.depth {
        write_mask_png(&dir.join("depth").join(&file), &d.mask.mask)?;
        write_frame_png(&stage("depth_background"), &d.background.frame)?;
        write_gray_png(&stage("depth_residual"), d.residual.height(), d.residual.width(), d.residual.to_u8_image())?;
    }
    Ok(ManifestFrame {
        index: out.index,
        file,
        motion_threshold: out.rgb.motion.threshold_used,
        rgb_inversion_loss: out.rgb.background.loss,
        depth_inversion_loss: out.depth.as_ref().and_then(|d| d.background.loss),
    })
}

fn eval(cli: &Cli, pred: Option<&Path>, aggregation: Option<Aggregation>) -> Result<()> {
    let mut cfg = settings(cli)?;
    if let Some(a) = aggregation {
        cfg.aggregation = a;
    }
    let spec = dataset(&cfg)?;
    let pred_dir = pred.map(Path::to_path_buf).unwrap_or_else(|| cfg.masks_dir());
    if !pred_dir.is_dir() {
        return Err(UsageError(format!("prediction directory {} does not exist", pred_dir.display())).into());
    }
    let names = if cfg.sequences.is_empty() {
        subdirs(&pred_dir)?
    } else {
        cfg.sequences.clone()
    };
    let mut evaluated = Vec::new();
    for name in names {
        let seq_pred = pred_dir.join(&name);
        if !seq_pred.is_dir() {
            continue;
        }
        let seq = load_sequence(&spec, &name)?;
        let Some(gt) = seq.gt.as_ref() else {
            log::warn!("sequence {name} has no ground truth; skipped");
            continue;
        };
        for method in MASK_DIRS {
            let mdir = seq_pred.join(method);
            if !mdir.is_dir() {
                continue;
            }
            let mut files: Vec<PathBuf> = fs::read_dir(&mdir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| frame_index(p).is_some())
                .collect();
            files.sort();
            let mut frames = Vec::new();
            for f in files {
                let idx = frame_index(&f).expect("filtered");
                if let Some(g) = gt.get(idx) {
                    frames.push(FrameEval::new(idx, confusion(&read_mask_png(&f)?, g)?));
                }
            }
            if !frames.is_empty() {
                evaluated.push(SequenceEval::new(&name, spec.category(&name), method, frames, cfg.aggregation)?);
            }
        }
    }
    if evaluated.is_empty() {
        return Err(UsageError(format!(
            "no predicted masks in {} overlap ground-truth frames",
            pred_dir.display()
        ))
        .into());
    }
    let report = EvalReport::new(cfg.aggregation, evaluated)?;
    let dir = cfg.output.join("eval");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
    let table = report.to_table();
    fs::write(dir.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Load {
            path: path.to_path_buf(),
            reason: "missing pipeline output; run segment first".into(),
        }
        .into());
    }
    Ok(())
}

fn read_rgb(path: &Path) -> Result<RgbImage> {
    require(path)?;
    Ok(image::open(path).with_context(|| format!("reading {}", path.display()))?.to_rgb8())
}

/// Panels: input, motion mask, masked input, generated background,
/// residual, RGB mask, fused mask, ground truth.
pub const STRIP_PANELS: usize = 8;

fn visualize(cli: &Cli, limit: Option<usize>) -> Result<()> {
    let cfg = settings(cli)?;
    let masks = cfg.masks_dir();
    let names = if cfg.sequences.is_empty() {
        if masks.is_dir() {
            subdirs(&masks)?
        } else {
            Vec::new()
        }
    } else {
        cfg.sequences.clone()
    };
    let names: Vec<String> = names.into_iter().filter(|n| masks.join(n).join("manifest.json").is_file()).collect();
    if names.is_empty() {
        return Err(UsageError(format!("no segmentation manifests under {}; run segment first", masks.display())).into());
    }
    let spec = dataset(&cfg)?;
    for name in names {
        let dir = masks.join(&name);
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::Config(format!("bad manifest for {name}: {e}")))?;
        let seq = load_sequence(&spec, &name)?;
        let take = limit.unwrap_or(manifest.frames.len()).min(manifest.frames.len());
        let (h, w) = (manifest.height as u32, manifest.width as u32);
        let out_dir = cfg.output.join("visualize").join(&name);
        fs::create_dir_all(&out_dir)?;
        for f in &manifest.frames[..take] {
            let input = seq
                .frames
                .get(f.index)
                .ok_or_else(|| Error::Config(format!("manifest frame {} not in sequence {name}", f.index)))?;
            let at = |kind: &str| dir.join(&manifest.outputs[kind]).join(&f.file);
            let gt = match seq.gt.as_ref().and_then(|g| g.get(f.index)) {
                Some(g) => RgbImage::from_fn(w, h, |x, y| {
                    let v = match g.label(y as usize, x as usize) {
                        Label::Foreground => 255,
                        Label::Background => 0,
                        Label::Ignore => 128,
                    };
                    image::Rgb([v, v, v])
                }),
                None => RgbImage::new(w, h),
            };
            let panels = [
                RgbImage::from_raw(w, h, input.to_u8_interleaved()).expect("sized"),
                read_rgb(&at("motion"))?,
                read_rgb(&at("masked"))?,
                read_rgb(&at("background"))?,
                read_rgb(&at("residual"))?,
                read_rgb(&at("rgb"))?,
                read_rgb(&at("fused"))?,
                gt,
            ];
            let mut strip = RgbImage::new(w * STRIP_PANELS as u32, h);
            for (k, p) in panels.iter().enumerate() {
                if p.dimensions() != (w, h) {
                    return Err(Error::Shape(format!("panel {k} of frame {} is not {w}x{h}", f.index)).into());
                }
                image::imageops::replace(&mut strip, p, (k as u32 * w) as i64, 0);
            }
            let path = out_dir.join(&f.file);
            strip.save(&path).with_context(|| format!("writing {}", path.display()))?;
        }
        println!("{name}: {take} strips written to {}", out_dir.display());
    }
    Ok(())
}
