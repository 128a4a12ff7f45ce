use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use super::resize::{area_resize_plane, nearest_resize};
use super::{normalize_u8, DepthFrame, DepthRange, Frame, GroundTruthFrame, Label, Sequence};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// Subdirectory names inside `<root>/<sequence>/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Layout {
    pub rgb: String,
    pub depth: String,
    pub gt: String,
    pub background_rgb: String,
    pub background_depth: String,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            rgb: "rgb".into(),
            depth: "depth".into(),
            gt: "gt".into(),
            background_rgb: "background_rgb".into(),
            background_depth: "background_depth".into(),
        }
    }
}

/// Raw 8-bit GT value → label. Values not listed take `default`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub map: BTreeMap<u8, Label>,
    pub default: Label,
}

impl Default for LabelMap {
    fn default() -> Self {
        Self {
            map: BTreeMap::from([(0, Label::Background), (255, Label::Foreground)]),
            default: Label::Ignore,
        }
    }
}

impl LabelMap {
    pub fn label(&self, raw: u8) -> Label {
        self.map.get(&raw).copied().unwrap_or(self.default)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub root: PathBuf,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub labels: LabelMap,
    /// Frames are resized to `image_size × image_size`.
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// Explicit background-only frame indices per sequence. When absent for a
    /// sequence, frames whose GT holds no foreground are used.
    #[serde(default)]
    pub background_only: BTreeMap<String, Vec<usize>>,
    /// Sequence name → category, used for report aggregation.
    #[serde(default)]
    pub categories: BTreeMap<String, String>,
}

fn default_image_size() -> usize {
    64
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, image_size: usize) -> Self {
        Self {
            root: root.into(),
            layout: Layout::default(),
            labels: LabelMap::default(),
            image_size,
            background_only: BTreeMap::new(),
            categories: BTreeMap::new(),
        }
    }

    /// Reads a JSON spec; a relative `root` is resolved against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut spec: DatasetSpec = serde_json::from_str(&text)?;
        if spec.root.is_relative() {
            if let Some(dir) = path.parent() {
                spec.root = dir.join(&spec.root);
            }
        }
        Ok(spec)
    }

    pub fn category(&self, sequence: &str) -> String {
        self.categories
            .get(sequence)
            .cloned()
            .unwrap_or_else(|| sequence.to_string())
    }

    pub fn sequence_dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Load {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Lists an optional modality directory and checks it pairs 1:1 with the RGB frames.
fn paired(rgb: &[PathBuf], dir: &Path) -> Result<Option<Vec<PathBuf>>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let files = list_pngs(dir)?;
    let names = |v: &[PathBuf]| -> Vec<String> {
        v.iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect()
    };
    let (a, b) = (names(rgb), names(&files));
    if a != b {
        let sa: BTreeSet<_> = a.iter().collect();
        let sb: BTreeSet<_> = b.iter().collect();
        let offending = match (sa.difference(&sb).next(), sb.difference(&sa).next()) {
            (Some(missing), _) => dir.join(missing),
            (None, Some(extra)) => dir.join(extra),
            (None, None) => dir.to_path_buf(),
        };
        return Err(Error::Structural {
            path: offending,
            reason: format!("{} has {} frames but rgb has {}", dir.display(), b.len(), a.len()),
        });
    }
    Ok(Some(files))
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn load_rgb(path: &Path, size: usize) -> Result<Frame> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut t = Tensor::zeros(3, size, size);
    for c in 0..3 {
        let plane: Vec<f64> = (0..h * w).map(|i| normalize_u8(raw[i * 3 + c])).collect();
        let resized = area_resize_plane(&plane, h, w, size, size, |_| true, 0.0);
        t.channel_mut(c).copy_from_slice(&resized);
    }
    Frame::new(t)
}

/// Raw depth plane resized to `size`, plus its bit depth.
fn load_depth_raw(path: &Path, size: usize) -> Result<(Vec<f64>, u8)> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (plane, bits): (Vec<f64>, u8) = match img {
        DynamicImage::ImageLuma16(buf) => (buf.into_raw().into_iter().map(f64::from).collect(), 16),
        DynamicImage::ImageLuma8(buf) => (buf.into_raw().into_iter().map(f64::from).collect(), 8),
        other => {
            return Err(Error::Load {
                path: path.to_path_buf(),
                reason: format!("depth must be single-channel 8/16-bit, got {:?}", other.color()),
            })
        }
    };
    Ok((area_resize_plane(&plane, h, w, size, size, |v| v > 0.0, 0.0), bits))
}

fn load_gt(path: &Path, size: usize, labels: &LabelMap) -> Result<GroundTruthFrame> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = nearest_resize(&img.into_raw(), h, w, size, size);
    GroundTruthFrame::new(size, size, raw.into_iter().map(|v| labels.label(v)).collect())
}

fn depth_frames(raw: Vec<(Vec<f64>, u8)>, range: DepthRange, size: usize) -> Result<Vec<DepthFrame>> {
    raw.into_iter()
        .map(|(plane, bits)| {
            let values: Vec<f64> = if bits == 16 {
                plane.iter().map(|&v| range.normalize(v)).collect()
            } else {
                plane.iter().map(|&v| (v / 127.5 - 1.0).clamp(-1.0, 1.0)).collect()
            };
            DepthFrame::from_plane(size, size, &values, 3, bits)
        })
        .collect()
}

/// Loads `<root>/<name>/{rgb,depth,gt}/*.png`, resized to the model size.
pub fn load_sequence(spec: &DatasetSpec, name: &str) -> Result<Sequence> {
    let dir = spec.sequence_dir(name);
    if !dir.is_dir() {
        return Err(Error::Load {
            path: dir,
            reason: "sequence directory does not exist".into(),
        });
    }
    let rgb_dir = dir.join(&spec.layout.rgb);
    if !rgb_dir.is_dir() {
        return Err(Error::Load {
            path: rgb_dir,
            reason: "rgb directory does not exist".into(),
        });
    }
    let rgb_files = list_pngs(&rgb_dir)?;
    if rgb_files.is_empty() {
        return Err(Error::Load {
            path: rgb_dir,
            reason: "no RGB frames".into(),
        });
    }
    let depth_files = paired(&rgb_files, &dir.join(&spec.layout.depth))?;
    let gt_files = paired(&rgb_files, &dir.join(&spec.layout.gt))?;
    let bg_files = paired(&rgb_files, &dir.join(&spec.layout.background_rgb))?;
    let bg_depth_files = paired(&rgb_files, &dir.join(&spec.layout.background_depth))?;

    let size = spec.image_size;
    let frames = rgb_files.iter().map(|p| load_rgb(p, size)).collect::<Result<Vec<_>>>()?;

    let depth_raw = depth_files
        .as_ref()
        .map(|fs| fs.iter().map(|p| load_depth_raw(p, size)).collect::<Result<Vec<_>>>())
        .transpose()?;
    let range = DepthRange::from_values(depth_raw.iter().flatten().map(|(p, _)| p.as_slice()));
    let bg_depth_raw = bg_depth_files
        .as_ref()
        .map(|fs| fs.iter().map(|p| load_depth_raw(p, size)).collect::<Result<Vec<_>>>())
        .transpose()?;

    let gt = gt_files
        .as_ref()
        .map(|fs| fs.iter().map(|p| load_gt(p, size, &spec.labels)).collect::<Result<Vec<_>>>())
        .transpose()?;

    let background_only_indices: BTreeSet<usize> = match spec.background_only.get(name) {
        Some(ix) => ix.iter().copied().collect(),
        None => gt
            .as_ref()
            .map(|g| {
                g.iter()
                    .enumerate()
                    .filter(|(_, f)| f.count(Label::Foreground) == 0)
                    .map(|(i, _)| i)
                    .collect()
            })
            .unwrap_or_default(),
    };

    let seq = Sequence {
        name: name.to_string(),
        frames,
        depth_frames: depth_raw.map(|r| depth_frames(r, range, size)).transpose()?,
        gt,
        background_only_indices,
        true_backgrounds: bg_files
            .as_ref()
            .map(|fs| fs.iter().map(|p| load_rgb(p, size)).collect::<Result<Vec<_>>>())
            .transpose()?,
        true_depth_backgrounds: bg_depth_raw.map(|r| depth_frames(r, range, size)).transpose()?,
    };
    seq.validate()?;
    Ok(seq)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Writes a 1- or 3-channel frame as an 8-bit PNG.
pub fn write_frame_png(path: &Path, frame: &Frame) -> Result<()> {
    ensure_parent(path)?;
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let raw = frame.to_u8_interleaved();
    match frame.channels() {
        3 => RgbImage::from_raw(w, h, raw).expect("sized buffer").save(path)?,
        1 => GrayImage::from_raw(w, h, raw).expect("sized buffer").save(path)?,
        c => return Err(Error::Data(format!("cannot write {c}-channel frame as PNG"))),
    }
    Ok(())
}

pub fn write_gray_png(path: &Path, height: usize, width: usize, raw: Vec<u8>) -> Result<()> {
    ensure_parent(path)?;
    GrayImage::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::Data("gray buffer size mismatch".into()))?
        .save(path)?;
    Ok(())
}

pub fn write_depth_png16(path: &Path, height: usize, width: usize, raw: Vec<u16>) -> Result<()> {
    ensure_parent(path)?;
    ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::Data("depth buffer size mismatch".into()))?
        .save(path)?;
    Ok(())
}

/// Mask as 8-bit PNG with values {0, 255}.
pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_gray_png(path, mask.height(), mask.width(), mask.to_u8_image())
}

pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::from_vec(h, w, img.into_raw().into_iter().map(|v| (v > 127) as u8).collect())
}
