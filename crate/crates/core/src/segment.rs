//! Test-time pipeline: motion masking, background generation by latent
//! inversion, subtraction, binarization, depth denoising and fusion.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{DepthFrame, Frame, Sequence};
use crate::error::{shape_err, Error, Result};
use crate::exec::Exec;
use crate::flow::{complement, motion_mask, FlowEstimator, HornSchunck, MotionMask};
use crate::gan::{Checkpoint, Modality};
use crate::gan::LatentVector;
use crate::inversion::{invert, invert_from, InversionConfig};
use crate::mask::BinaryMask;
use crate::nn::Parameterized;
use crate::tensor::Tensor;

/// Per-pixel non-negative difference between a frame and its background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForegroundMap {
    height: usize,
    width: usize,
    residual: Vec<f64>,
}

impl ForegroundMap {
    pub fn new(height: usize, width: usize, residual: Vec<f64>) -> Result<Self> {
        if residual.len() != height * width {
            return Err(shape_err(format!(
                "{} residual values for {height}x{width}",
                residual.len()
            )));
        }
        if residual.iter().any(|r| r.is_nan() || *r < 0.0) {
            return Err(Error::Data("residual values must be non-negative".into()));
        }
        Ok(Self { height, width, residual })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    /// 8-bit rendering scaled so the maximum possible residual (2) maps to 255.
    pub fn to_u8_image(&self) -> Vec<u8> {
        self.residual
            .iter()
            .map(|r| (r / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskModality {
    Rgb,
    Depth,
    Fused,
}

impl MaskModality {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskModality::Rgb => "rgb",
            MaskModality::Depth => "depth",
            MaskModality::Fused => "fused",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMask {
    pub mask: BinaryMask,
    pub modality: MaskModality,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ThresholdRule {
    Fixed { tau: f64 },
    /// `mean + k * std` of the residual map.
    MeanStd { k: f64 },
    Otsu,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::MeanStd { k: 2.0 }
    }
}

/// How a multi-channel residual becomes one value per pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelReduction {
    #[default]
    Max,
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub threshold: ThresholdRule,
    /// Used when the selected rule degenerates (zero spread).
    pub fallback_tau: f64,
    pub reduction: ChannelReduction,
    /// 3x3 opening then closing of each binary mask.
    pub morphology: bool,
    pub inversion: InversionConfig,
    pub flow: HornSchunck,
    pub rgb_checkpoint: Option<PathBuf>,
    pub depth_checkpoint: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: ThresholdRule::default(),
            fallback_tau: 0.1,
            reduction: ChannelReduction::Max,
            morphology: true,
            inversion: InversionConfig::default(),
            flow: HornSchunck::default(),
            rgb_checkpoint: None,
            depth_checkpoint: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        match self.threshold {
            ThresholdRule::Fixed { tau } if !(tau >= 0.0 && tau.is_finite()) => bad("fixed threshold must be finite and >= 0")?,
            ThresholdRule::MeanStd { k } if !k.is_finite() => bad("threshold k must be finite")?,
            _ => {}
        }
        if !(self.fallback_tau >= 0.0 && self.fallback_tau.is_finite()) {
            bad("fallback threshold must be finite and >= 0")?;
        }
        self.inversion.validate()
    }
}

/// Zeroes the pixels the motion mask marks as moving.
pub fn suppress_foreground(x: &Frame, m: &MotionMask) -> Result<Frame> {
    if (x.height(), x.width()) != (m.mask.height(), m.mask.width()) {
        return Err(shape_err(format!(
            "frame {}x{} vs motion mask {}x{}",
            x.height(),
            x.width(),
            m.mask.height(),
            m.mask.width()
        )));
    }
    let plane = x.height() * x.width();
    let bits = m.mask.bits();
    let mut t = x.tensor().clone();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v *= bits[i % plane] as f64;
    }
    Frame::new(t)
}

/// Per-pixel residual `|x - background|` reduced across channels.
pub fn residual_map(x: &Frame, background: &Frame, reduction: ChannelReduction) -> Result<ForegroundMap> {
    x.tensor().ensure_same_shape(background.tensor(), "foreground extraction")?;
    let (c, h, w) = x.tensor().shape();
    let plane = h * w;
    let (a, b) = (x.tensor().data(), background.tensor().data());
    let residual = (0..plane)
        .map(|p| {
            let diffs = (0..c).map(|ch| (a[ch * plane + p] - b[ch * plane + p]).abs());
            match reduction {
                ChannelReduction::Max => diffs.fold(0.0, f64::max),
                ChannelReduction::Sum => diffs.sum(),
                ChannelReduction::Mean => diffs.sum::<f64>() / c as f64,
            }
        })
        .collect();
    ForegroundMap::new(h, w, residual)
}

/// Threshold chosen by `rule` for this residual map.
pub fn threshold_value(map: &ForegroundMap, rule: ThresholdRule, fallback_tau: f64) -> f64 {
    let r = &map.residual;
    let n = r.len() as f64;
    match rule {
        ThresholdRule::Fixed { tau } => tau,
        ThresholdRule::MeanStd { k } => {
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std <= 1e-12 {
                log::warn!("residual has zero spread; using fixed threshold {fallback_tau}");
                fallback_tau
            } else {
                mean + k * std
            }
        }
        ThresholdRule::Otsu => otsu(r).unwrap_or_else(|| {
            log::warn!("residual is constant; using fixed threshold {fallback_tau}");
            fallback_tau
        }),
    }
}

fn otsu(values: &[f64]) -> Option<f64> {
    const BINS: usize = 256;
    let max = values.iter().copied().fold(0.0, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= min {
        return None;
    }
    let width = (max - min) / BINS as f64;
    let mut hist = [0usize; BINS];
    for &v in values {
        hist[(((v - min) / width) as usize).min(BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_bin) = (-1.0, 0);
    for (i, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_bin = i;
        }
    }
    // pixels in bins above best_bin are foreground
    Some(min + (best_bin + 1) as f64 * width - width * 1e-9)
}

/// Residual map and its binarization (`1` where the residual exceeds the threshold).
pub fn extract_foreground(
    x: &Frame,
    background: &Frame,
    rule: ThresholdRule,
    fallback_tau: f64,
    reduction: ChannelReduction,
) -> Result<(ForegroundMap, BinaryMask)> {
    let map = residual_map(x, background, reduction)?;
    let t = threshold_value(&map, rule, fallback_tau);
    let bits = map.residual.iter().map(|&r| (r > t) as u8).collect();
    let mask = BinaryMask::from_vec(map.height, map.width, bits)?;
    Ok((map, mask))
}

/// Pixel-wise OR of an RGB and a depth mask.
pub fn fuse(rgb: &SegmentationMask, depth: &SegmentationMask) -> Result<SegmentationMask> {
    Ok(SegmentationMask {
        mask: rgb.mask.or(&depth.mask)?,
        modality: MaskModality::Fused,
    })
}

/// A background produced for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedBackground {
    pub frame: Frame,
    /// Latent code behind a generated background, when there is one.
    pub z: Option<LatentVector>,
    /// Final inversion loss, when the background came from inversion.
    pub loss: Option<f64>,
}

/// Source of background estimates for test frames.
pub trait BackgroundModel: Send + Sync {
    fn modality(&self) -> Modality;

    /// Short identity recorded in run manifests.
    fn identity(&self) -> String;

    /// Background for frame `index` given the (possibly masked) `input`.
    fn background(&self, index: usize, input: &Frame, warm: Option<&LatentVector>) -> Result<GeneratedBackground>;
}

/// Background by latent inversion of a trained generator.
#[derive(Clone, Debug)]
pub struct GanBackground {
    pub checkpoint: Checkpoint,
    pub inversion: InversionConfig,
    pub source: Option<PathBuf>,
}

impl GanBackground {
    pub fn new(checkpoint: Checkpoint, inversion: InversionConfig) -> Self {
        Self {
            checkpoint,
            inversion,
            source: None,
        }
    }
}

impl BackgroundModel for GanBackground {
    fn modality(&self) -> Modality {
        self.checkpoint.modality
    }

    fn identity(&self) -> String {
        let path = self
            .source
            .as_ref()
            .map(|p| format!("{} ", p.display()))
            .unwrap_or_default();
        format!(
            "{path}scene={} epoch={} generator={:016x} discriminator={:016x}",
            self.checkpoint.scene,
            self.checkpoint.epoch,
            self.checkpoint.generator.checksum(),
            self.checkpoint.discriminator.checksum()
        )
    }

    fn background(&self, index: usize, input: &Frame, warm: Option<&LatentVector>) -> Result<GeneratedBackground> {
        let (g, d) = (&self.checkpoint.generator, &self.checkpoint.discriminator);
        let result = match warm {
            Some(z0) => invert_from(g, d, input, &self.inversion, z0.clone())?,
            None => {
                let cfg = InversionConfig {
                    seed: frame_seed(self.inversion.seed, index),
                    ..self.inversion.clone()
                };
                invert(g, d, input, &cfg)?
            }
        };
        let loss = result.best().total;
        Ok(GeneratedBackground {
            frame: result.generated,
            z: Some(result.z),
            loss: Some(loss),
        })
    }
}

/// Independent, reproducible per-frame seed.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Returns the known true background of each frame.
#[derive(Clone, Debug)]
pub struct OracleBackground {
    pub modality: Modality,
    pub frames: Vec<Frame>,
}

impl OracleBackground {
    pub fn rgb(seq: &Sequence) -> Result<Self> {
        let frames = seq
            .true_backgrounds
            .clone()
            .ok_or_else(|| Error::Config(format!("sequence {} has no true RGB backgrounds", seq.name)))?;
        Ok(Self {
            modality: Modality::Rgb,
            frames,
        })
    }

    pub fn depth(seq: &Sequence) -> Result<Self> {
        let frames = seq
            .true_depth_backgrounds
            .as_ref()
            .ok_or_else(|| Error::Config(format!("sequence {} has no true depth backgrounds", seq.name)))?
            .iter()
            .map(|d| d.frame.clone())
            .collect();
        Ok(Self {
            modality: Modality::Depth,
            frames,
        })
    }
}

impl BackgroundModel for OracleBackground {
    fn modality(&self) -> Modality {
        self.modality
    }

    fn identity(&self) -> String {
        format!("oracle-{}", self.modality)
    }

    fn background(&self, index: usize, input: &Frame, _warm: Option<&LatentVector>) -> Result<GeneratedBackground> {
        let frame = self
            .frames
            .get(index)
            .ok_or_else(|| Error::Parameter(format!("no oracle background for frame {index}")))?;
        input.tensor().ensure_same_shape(frame.tensor(), "oracle background")?;
        Ok(GeneratedBackground {
            frame: frame.clone(),
            z: None,
            loss: None,
        })
    }
}

fn expect_modality(model: &dyn BackgroundModel, want: Modality) -> Result<()> {
    if model.modality() != want {
        return Err(Error::Config(format!(
            "expected a {want} model, got {} ({})",
            model.modality(),
            model.identity()
        )));
    }
    Ok(())
}

fn cleanup(mask: BinaryMask, cfg: &PipelineConfig) -> BinaryMask {
    if cfg.morphology {
        mask.open().close()
    } else {
        mask
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbStage {
    pub motion: MotionMask,
    pub masked_input: Frame,
    pub background: GeneratedBackground,
    pub residual: ForegroundMap,
    pub mask: SegmentationMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthStage {
    pub background: GeneratedBackground,
    pub residual: ForegroundMap,
    pub mask: SegmentationMask,
}

/// Motion mask of `x` relative to the preceding frame.
pub fn frame_motion(x: &Frame, prev: &Frame, flow: &dyn FlowEstimator) -> Result<MotionMask> {
    motion_mask(&flow.estimate(prev, x)?)
}

/// RGB branch: flow, motion mask, suppression, inversion on the suppressed
/// frame, subtraction against the unmasked frame.
pub fn segment_rgb(
    index: usize,
    x: &Frame,
    prev: &Frame,
    model: &dyn BackgroundModel,
    cfg: &PipelineConfig,
    warm: Option<&LatentVector>,
) -> Result<RgbStage> {
    expect_modality(model, Modality::Rgb)?;
    let motion = frame_motion(x, prev, &cfg.flow)?;
    segment_rgb_with_motion(index, x, motion, model, cfg, warm)
}

pub fn segment_rgb_with_motion(
    index: usize,
    x: &Frame,
    motion: MotionMask,
    model: &dyn BackgroundModel,
    cfg: &PipelineConfig,
    warm: Option<&LatentVector>,
) -> Result<RgbStage> {
    expect_modality(model, Modality::Rgb)?;
    let masked_input = suppress_foreground(x, &motion)?;
    let background = model.background(index, &masked_input, warm)?;
    let (residual, mask) = extract_foreground(x, &background.frame, cfg.threshold, cfg.fallback_tau, cfg.reduction)?;
    Ok(RgbStage {
        motion,
        masked_input,
        background,
        residual,
        mask: SegmentationMask {
            mask: cleanup(mask, cfg),
            modality: MaskModality::Rgb,
        },
    })
}

/// Depth branch: inversion on the raw depth frame, subtraction, then only
/// pixels the motion mask marks as moving are kept.
pub fn segment_depth(
    index: usize,
    x: &DepthFrame,
    motion: &MotionMask,
    model: &dyn BackgroundModel,
    cfg: &PipelineConfig,
    warm: Option<&LatentVector>,
) -> Result<DepthStage> {
    expect_modality(model, Modality::Depth)?;
    let background = model.background(index, &x.frame, warm)?;
    let (residual, mask) = extract_foreground(&x.frame, &background.frame, cfg.threshold, cfg.fallback_tau, cfg.reduction)?;
    let moving = complement(motion);
    let mask = cleanup(mask, cfg).and(&moving.mask)?;
    Ok(DepthStage {
        background,
        residual,
        mask: SegmentationMask {
            mask,
            modality: MaskModality::Depth,
        },
    })
}

/// Everything the pipeline produced for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    pub index: usize,
    pub rgb: RgbStage,
    pub depth: Option<DepthStage>,
    pub fused: SegmentationMask,
}

/// Index of the frame used as the flow reference for frame `t`.
///
/// The first frame has no predecessor and is compared with the second.
pub fn flow_reference(t: usize, len: usize) -> usize {
    match t {
        0 if len > 1 => 1,
        0 => 0,
        _ => t - 1,
    }
}

fn run_frame(
    seq: &Sequence,
    t: usize,
    rgb: &dyn BackgroundModel,
    depth: Option<&dyn BackgroundModel>,
    cfg: &PipelineConfig,
    warm: (Option<&LatentVector>, Option<&LatentVector>),
) -> Result<FrameOutput> {
    let x = &seq.frames[t];
    let prev = &seq.frames[flow_reference(t, seq.len())];
    let rgb_stage = segment_rgb(t, x, prev, rgb, cfg, warm.0)?;
    let depth_stage = match depth {
        Some(model) => {
            let frames = seq
                .depth_frames
                .as_ref()
                .ok_or_else(|| Error::Config(format!("sequence {} has no depth frames", seq.name)))?;
            Some(segment_depth(t, &frames[t], &rgb_stage.motion, model, cfg, warm.1)?)
        }
        None => None,
    };
    let fused = match &depth_stage {
        Some(d) => fuse(&rgb_stage.mask, &d.mask)?,
        None => SegmentationMask {
            mask: rgb_stage.mask.mask.clone(),
            modality: MaskModality::Fused,
        },
    };
    Ok(FrameOutput {
        index: t,
        rgb: rgb_stage,
        depth: depth_stage,
        fused,
    })
}

/// Segments the selected frames of a sequence.
///
/// Frames are independent and run in parallel under `exec`; results come
/// back in the order of `indices`. With warm-started inversion frames are
/// processed in order so each can start from its predecessor's solution.
pub fn segment_sequence(
    seq: &Sequence,
    indices: &[usize],
    rgb: &dyn BackgroundModel,
    depth: Option<&dyn BackgroundModel>,
    cfg: &PipelineConfig,
    exec: Exec,
) -> Result<Vec<FrameOutput>> {
    cfg.validate()?;
    seq.validate()?;
    expect_modality(rgb, Modality::Rgb)?;
    if let Some(d) = depth {
        expect_modality(d, Modality::Depth)?;
    }
    if let Some(&bad) = indices.iter().find(|&&t| t >= seq.len()) {
        return Err(Error::Parameter(format!("frame {bad} out of range for {} frames", seq.len())));
    }
    if cfg.inversion.warm_start {
        let mut out = Vec::with_capacity(indices.len());
        let (mut zr, mut zd): (Option<LatentVector>, Option<LatentVector>) = (None, None);
        for &t in indices {
            let f = run_frame(seq, t, rgb, depth, cfg, (zr.as_ref(), zd.as_ref()))?;
            zr = f.rgb.background.z.clone();
            zd = f.depth.as_ref().and_then(|d| d.background.z.clone());
            out.push(f);
        }
        return Ok(out);
    }
    exec.map(indices, |&t| run_frame(seq, t, rgb, depth, cfg, (None, None)))
        .into_iter()
        .collect()
}

/// Helper for tests and tools: a frame from a single-channel plane replicated to 3 channels.
pub fn frame_from_plane(height: usize, width: usize, plane: &[f64]) -> Result<Frame> {
    if plane.len() != height * width {
        return Err(shape_err("plane size mismatch".to_string()));
    }
    let data = plane.iter().copied().cycle().take(3 * height * width).collect();
    Frame::new(Tensor::from_vec(3, height, width, data)?)
}
