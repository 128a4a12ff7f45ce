//! Deterministic synthetic RGB-D scenes with exact ground truth.
//!
//! A textured static background (colour and a piecewise-planar depth map)
//! is overlaid with a checker-textured rectangular object following a
//! bouncing trajectory. Challenge options add a moving shadow, colour or
//! depth camouflage, or a static invalid-depth region. Scenes are rendered
//! in 8-bit colour / 16-bit depth, exactly as they would be stored on disk.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    write_depth_png16, write_frame_png, write_mask_png, DepthFrame, DepthRange, Frame, GroundTruthFrame, Sequence,
};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Challenge {
    #[default]
    None,
    /// A darkened region trails the object (colour only).
    Shadow,
    /// Object colours sit a few levels above the background beneath it.
    ColorCamouflage,
    /// Object depth sits just in front of the background beneath it.
    DepthCamouflage,
    /// A static region has invalid (zero) depth.
    OutOfRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub size: usize,
    pub frames: usize,
    /// Object side length in pixels.
    pub object_size: usize,
    /// Horizontal object speed in pixels per frame.
    pub speed: usize,
    /// Frames at the start during which the object is out of view.
    pub absent_frames: usize,
    pub challenge: Challenge,
    /// Standard deviation of per-frame depth noise, in raw depth units.
    pub depth_noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            size: 64,
            frames: 100,
            object_size: 12,
            speed: 2,
            absent_frames: 10,
            challenge: Challenge::Shadow,
            depth_noise: 8.0,
        }
    }
}

impl SceneParams {
    pub fn scaled(size: usize, frames: usize) -> Self {
        Self {
            size,
            frames,
            object_size: (size * 3 / 16).max(3),
            speed: (size / 32).max(1),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 8 || self.frames == 0 {
            return Err(Error::Parameter("scene needs size >= 8 and at least one frame".into()));
        }
        if self.object_size == 0 || self.object_size * 2 >= self.size {
            return Err(Error::Parameter(format!(
                "object size {} must be in 1..{}",
                self.object_size,
                self.size / 2
            )));
        }
        if self.speed == 0 || self.speed >= self.object_size {
            return Err(Error::Parameter("speed must be in 1..object_size".into()));
        }
        if !(self.depth_noise >= 0.0 && self.depth_noise.is_finite()) {
            return Err(Error::Parameter("depth noise must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// A rendered scene in storage formats (interleaved 8-bit RGB, 16-bit depth).
#[derive(Clone, Debug, PartialEq)]
pub struct RawScene {
    pub params: SceneParams,
    pub rgb: Vec<Vec<u8>>,
    pub depth: Vec<Vec<u16>>,
    pub background_rgb: Vec<u8>,
    pub background_depth: Vec<u16>,
    /// Exact object support per frame.
    pub footprints: Vec<BinaryMask>,
    /// Object top-left corner per frame (may lie outside the image).
    pub positions: Vec<(i64, i64)>,
}

const WALL_NEAR: f64 = 3000.0;
const WALL_FAR: f64 = 4000.0;
const BOX_DEPTH: f64 = 2400.0;
const OBJECT_DEPTH: f64 = 1500.0;

struct Background {
    rgb: Vec<[f64; 3]>,
    depth: Vec<f64>,
}

fn render_background(p: &SceneParams, rng: &mut ChaCha8Rng) -> Background {
    let n = p.size;
    let s = n as f64 / 64.0;
    let base = [
        rng.random_range(60.0..90.0),
        rng.random_range(100.0..130.0),
        rng.random_range(120.0..150.0),
    ];
    let lx = rng.random_range(12.0..24.0) * s;
    let ly = rng.random_range(12.0..24.0) * s;
    let phase = rng.random_range(0.0..2.0 * PI);
    let rects: Vec<(usize, usize, usize, usize, f64)> = (0..3)
        .map(|_| {
            let w = rng.random_range(n / 8..n / 3);
            let h = rng.random_range(n / 8..n / 3);
            let x = rng.random_range(0..n - w);
            let y = rng.random_range(0..n - h);
            (x, y, w, h, rng.random_range(-30.0..30.0))
        })
        .collect();
    let mut rgb = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 / n as f64, y as f64 / n as f64);
            let wave = 22.0 * (2.0 * PI * (x as f64 / lx + y as f64 / ly) + phase).sin();
            let rect: f64 = rects
                .iter()
                .filter(|r| (r.0..r.0 + r.2).contains(&x) && (r.1..r.1 + r.3).contains(&y))
                .map(|r| r.4)
                .sum();
            let grain = rng.random_range(-6.0..6.0);
            let v = [
                base[0] + wave + rect + grain,
                base[1] + 30.0 * fx + wave + rect + grain,
                base[2] + 20.0 * fy - wave + rect + grain,
            ];
            rgb.push([v[0].clamp(10.0, 130.0), v[1].clamp(10.0, 245.0), v[2].clamp(10.0, 245.0)]);
        }
    }
    // wall receding left to right, a box standing in the lower middle
    let (bx0, bx1, by0) = (n * 5 / 8, n * 7 / 8, n / 2);
    let mut depth = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let d = if (bx0..bx1).contains(&x) && y >= by0 {
                BOX_DEPTH
            } else {
                WALL_NEAR + (WALL_FAR - WALL_NEAR) * x as f64 / (n - 1) as f64
            };
            depth.push(d);
        }
    }
    if p.challenge == Challenge::OutOfRange {
        for y in 0..n / 4 {
            for x in 0..n / 4 {
                depth[y * n + x] = 0.0;
            }
        }
    }
    Background { rgb, depth }
}

fn object_position(p: &SceneParams, t: usize) -> Option<(i64, i64)> {
    if t < p.absent_frames {
        return None;
    }
    let n = p.size as i64;
    let o = p.object_size as i64;
    // triangle wave between fully-hidden-left and touching the right margin
    let lo = -o;
    let hi = n - o - 2;
    let span = hi - lo;
    let s = ((t - p.absent_frames) * p.speed) as i64 % (2 * span);
    let x = if s <= span { lo + s } else { hi - (s - span) };
    let amp = (n / 8) as f64;
    let y = n / 2 - o / 2 + (amp * (2.0 * PI * t as f64 / 40.0).sin()).round() as i64;
    Some((x, y))
}

pub fn render(seed: u64, p: &SceneParams) -> Result<RawScene> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = render_background(p, &mut rng);
    let n = p.size;
    let o = p.object_size as i64;
    let cell = (p.object_size / 4).max(2) as i64;
    let noise = Normal::new(0.0, p.depth_noise.max(1e-12)).expect("valid std");

    let background_rgb: Vec<u8> = bg.rgb.iter().flat_map(|c| c.map(|v| v.round() as u8)).collect();
    let background_depth: Vec<u16> = bg.depth.iter().map(|&d| d.round() as u16).collect();

    let mut rgb = Vec::with_capacity(p.frames);
    let mut depth = Vec::with_capacity(p.frames);
    let mut footprints = Vec::with_capacity(p.frames);
    let mut positions = Vec::with_capacity(p.frames);
    for t in 0..p.frames {
        let pos = object_position(p, t);
        positions.push(pos.unwrap_or((-o, -o)));
        let inside = |y: usize, x: usize| -> Option<(i64, i64)> {
            let (ox, oy) = pos?;
            let (dy, dx) = (y as i64 - oy, x as i64 - ox);
            ((0..o).contains(&dy) && (0..o).contains(&dx)).then_some((dy, dx))
        };
        let in_shadow = |y: usize, x: usize| -> bool {
            let Some((ox, oy)) = pos else { return false };
            if p.challenge != Challenge::Shadow {
                return false;
            }
            let cx = ox as f64 + o as f64 * 1.1;
            let cy = oy as f64 + o as f64 * 1.0;
            let (rx, ry) = (o as f64 * 0.7, o as f64 * 0.4);
            let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
            dx * dx + dy * dy <= 1.0
        };
        let mut frame_rgb = Vec::with_capacity(n * n * 3);
        let mut frame_depth = Vec::with_capacity(n * n);
        let mut fp = BinaryMask::zeros(n, n);
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                let b = bg.rgb[i];
                let noise_d = if p.depth_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let (c, d) = match inside(y, x) {
                    Some((dy, dx)) => {
                        fp.set(y, x, true);
                        let odd = ((dy / cell) + (dx / cell)) % 2 == 1;
                        let c = if p.challenge == Challenge::ColorCamouflage {
                            let k = if odd { 14.0 } else { 6.0 };
                            b.map(|v| v + k)
                        } else if odd {
                            [245.0, 210.0, 50.0]
                        } else {
                            [230.0, 40.0, 40.0]
                        };
                        let d = if p.challenge == Challenge::DepthCamouflage {
                            bg.depth[i] - 80.0
                        } else {
                            OBJECT_DEPTH
                        };
                        (c, d)
                    }
                    None if in_shadow(y, x) => (b.map(|v| v * 0.8), bg.depth[i]),
                    None => (b, bg.depth[i]),
                };
                frame_rgb.extend(c.map(|v| v.round().clamp(0.0, 255.0) as u8));
                let d = if bg.depth[i] == 0.0 && inside(y, x).is_none() {
                    0.0
                } else {
                    (d + noise_d).max(1.0)
                };
                frame_depth.push(d.round().min(u16::MAX as f64) as u16);
            }
        }
        rgb.push(frame_rgb);
        depth.push(frame_depth);
        footprints.push(fp);
    }
    Ok(RawScene {
        params: p.clone(),
        rgb,
        depth,
        background_rgb,
        background_depth,
        footprints,
        positions,
    })
}

impl RawScene {
    pub fn background_only_indices(&self) -> BTreeSet<usize> {
        self.footprints
            .iter()
            .enumerate()
            .filter(|(_, f)| f.count_ones() == 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Normalizes exactly as the disk loader does at native resolution.
    pub fn to_sequence(&self, name: &str) -> Result<Sequence> {
        let n = self.params.size;
        let frames = self
            .rgb
            .iter()
            .map(|raw| Frame::from_u8_interleaved(n, n, 3, raw))
            .collect::<Result<Vec<_>>>()?;
        let planes: Vec<Vec<f64>> = self
            .depth
            .iter()
            .map(|d| d.iter().map(|&v| v as f64).collect())
            .collect();
        let range = DepthRange::from_values(planes.iter().map(Vec::as_slice));
        let to_depth = |plane: &[f64]| -> Result<DepthFrame> {
            let values: Vec<f64> = plane.iter().map(|&v| range.normalize(v)).collect();
            DepthFrame::from_plane(n, n, &values, 3, 16)
        };
        let depth_frames = planes.iter().map(|p| to_depth(p)).collect::<Result<Vec<_>>>()?;
        let bg = Frame::from_u8_interleaved(n, n, 3, &self.background_rgb)?;
        let bg_plane: Vec<f64> = self.background_depth.iter().map(|&v| v as f64).collect();
        let bg_depth = to_depth(&bg_plane)?;
        let seq = Sequence {
            name: name.to_string(),
            frames,
            depth_frames: Some(depth_frames),
            gt: Some(self.footprints.iter().map(GroundTruthFrame::from_mask).collect()),
            background_only_indices: self.background_only_indices(),
            true_backgrounds: Some(vec![bg; self.rgb.len()]),
            true_depth_backgrounds: Some(vec![bg_depth; self.rgb.len()]),
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Writes `<root>/<name>/{rgb,depth,gt,background_rgb,background_depth}/frame_%06d.png`.
    pub fn write(&self, root: &Path, name: &str) -> Result<()> {
        let n = self.params.size;
        let dir = root.join(name);
        let bg = Frame::from_u8_interleaved(n, n, 3, &self.background_rgb)?;
        for t in 0..self.rgb.len() {
            let file = format!("frame_{t:06}.png");
            write_frame_png(&dir.join("rgb").join(&file), &Frame::from_u8_interleaved(n, n, 3, &self.rgb[t])?)?;
            write_depth_png16(&dir.join("depth").join(&file), n, n, self.depth[t].clone())?;
            write_mask_png(&dir.join("gt").join(&file), &self.footprints[t])?;
            write_frame_png(&dir.join("background_rgb").join(&file), &bg)?;
            write_depth_png16(&dir.join("background_depth").join(&file), n, n, self.background_depth.clone())?;
        }
        Ok(())
    }
}

/// Renders a scene and converts it to a normalized [`Sequence`].
pub fn synth_generate(seed: u64, params: &SceneParams) -> Result<Sequence> {
    render(seed, params)?.to_sequence("synthetic")
}
