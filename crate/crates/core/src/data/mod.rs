//! RGB-D sequences: frame types, disk loading, augmentation and synthetic scenes.

mod augment;
mod loader;
pub mod resize;
pub mod synth;

pub use augment::{augment, AugmentConfig};
pub use loader::{
    load_sequence, read_mask_png, write_depth_png16, write_frame_png, write_gray_png, write_mask_png, DatasetSpec,
    LabelMap, Layout,
};
pub use synth::{synth_generate, Challenge, SceneParams};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// Maps an 8-bit intensity to [-1, 1].
#[inline]
pub fn normalize_u8(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Inverse of [`normalize_u8`], rounding to the nearest level.
#[inline]
pub fn denormalize_u8(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// A C×H×W image with every value in [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pixels: Tensor,
}

impl Frame {
    pub fn new(pixels: Tensor) -> Result<Self> {
        if let Some(v) = pixels.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("frame value {v} outside [-1, 1]")));
        }
        Ok(Self { pixels })
    }

    /// Clamps into [-1, 1]; non-finite values become 0.
    pub fn clamped(pixels: Tensor) -> Self {
        Self {
            pixels: pixels.map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 }),
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            pixels: Tensor::zeros(channels, height, width),
        }
    }

    /// From interleaved 8-bit samples (`HWC`, as stored in PNGs).
    pub fn from_u8_interleaved(height: usize, width: usize, channels: usize, raw: &[u8]) -> Result<Self> {
        if raw.len() != height * width * channels {
            return Err(shape_err(format!(
                "{} bytes cannot hold {height}x{width}x{channels}",
                raw.len()
            )));
        }
        let mut t = Tensor::zeros(channels, height, width);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    t.set(c, y, x, normalize_u8(raw[(y * width + x) * channels + c]));
                }
            }
        }
        Ok(Self { pixels: t })
    }

    pub fn to_u8_interleaved(&self) -> Vec<u8> {
        let (c, h, w) = self.pixels.shape();
        let mut out = Vec::with_capacity(c * h * w);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out.push(denormalize_u8(self.pixels.get(ch, y, x)));
                }
            }
        }
        out
    }

    pub fn tensor(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_tensor(self) -> Tensor {
        self.pixels
    }

    pub fn channels(&self) -> usize {
        self.pixels.channels()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    /// Luma in [0, 1] (Rec. 601 weights for 3 channels, channel mean otherwise).
    pub fn to_gray(&self) -> Vec<f64> {
        let (c, h, w) = self.pixels.shape();
        let n = h * w;
        let mut out = vec![0.0; n];
        if c == 3 {
            let (r, g, b) = (self.pixels.channel(0), self.pixels.channel(1), self.pixels.channel(2));
            for i in 0..n {
                out[i] = (0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i] + 1.0) * 0.5;
            }
        } else {
            for ch in 0..c {
                for (o, v) in out.iter_mut().zip(self.pixels.channel(ch)) {
                    *o += (v + 1.0) * 0.5 / c as f64;
                }
            }
        }
        out
    }
}

/// Depth image replicated to the model's channel count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthFrame {
    pub frame: Frame,
    pub source_bit_depth: u8,
}

impl DepthFrame {
    /// Builds a depth frame from single-channel normalized values, replicating to `channels`.
    pub fn from_plane(height: usize, width: usize, values: &[f64], channels: usize, source_bit_depth: u8) -> Result<Self> {
        if values.len() != height * width {
            return Err(shape_err(format!("depth plane of {} values for {height}x{width}", values.len())));
        }
        let mut data = Vec::with_capacity(values.len() * channels);
        for _ in 0..channels {
            data.extend_from_slice(values);
        }
        Ok(Self {
            frame: Frame::new(Tensor::from_vec(channels, height, width, data)?)?,
            source_bit_depth,
        })
    }
}

/// Per-sequence min-max normalization of 16-bit depth. Zero is the invalid sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl DepthRange {
    pub fn from_values<'a>(planes: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for plane in planes {
            for &v in plane.iter().filter(|v| **v > 0.0) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 0.0);
        }
        Self { min: lo, max: hi }
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        if raw <= 0.0 {
            return -1.0;
        }
        let span = self.max - self.min;
        if span <= 0.0 {
            return 1.0;
        }
        (2.0 * (raw - self.min) / span - 1.0).clamp(-1.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Background,
    Foreground,
    Ignore,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    height: usize,
    width: usize,
    labels: Vec<Label>,
}

impl GroundTruthFrame {
    pub fn new(height: usize, width: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(shape_err(format!("{} labels for {height}x{width}", labels.len())));
        }
        Ok(Self { height, width, labels })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            labels: mask
                .bits()
                .iter()
                .map(|&b| if b == 1 { Label::Foreground } else { Label::Background })
                .collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, y: usize, x: usize) -> Label {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn foreground_mask(&self) -> BinaryMask {
        BinaryMask::from_vec(
            self.height,
            self.width,
            self.labels.iter().map(|&l| (l == Label::Foreground) as u8).collect(),
        )
        .expect("sizes agree")
    }
}

/// An RGB-D video with optional ground truth and true backgrounds.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Frame>,
    pub depth_frames: Option<Vec<DepthFrame>>,
    pub gt: Option<Vec<GroundTruthFrame>>,
    pub background_only_indices: BTreeSet<usize>,
    /// Exact backgrounds, available for synthetic scenes (oracle mode).
    pub true_backgrounds: Option<Vec<Frame>>,
    pub true_depth_backgrounds: Option<Vec<DepthFrame>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        let check = |what: &str, len: Option<usize>| -> Result<()> {
            match len {
                Some(m) if m != n => Err(Error::Structural {
                    path: self.name.clone().into(),
                    reason: format!("{what} has {m} entries, expected {n}"),
                }),
                _ => Ok(()),
            }
        };
        check("depth", self.depth_frames.as_ref().map(Vec::len))?;
        check("gt", self.gt.as_ref().map(Vec::len))?;
        check("true backgrounds", self.true_backgrounds.as_ref().map(Vec::len))?;
        check("true depth backgrounds", self.true_depth_backgrounds.as_ref().map(Vec::len))?;
        if let Some(&i) = self.background_only_indices.iter().find(|&&i| i >= n) {
            return Err(Error::Structural {
                path: self.name.clone().into(),
                reason: format!("background-only index {i} out of range for {n} frames"),
            });
        }
        Ok(())
    }

    pub fn background_only_depth(&self) -> Vec<Frame> {
        match &self.depth_frames {
            Some(d) => self
                .background_only_indices
                .iter()
                .map(|&i| d[i].frame.clone())
                .collect(),
            None => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn u8_normalization_round_trips(v in any::<u8>()) {
            let x = normalize_u8(v);
            prop_assert!((-1.0..=1.0).contains(&x));
            prop_assert_eq!(denormalize_u8(x), v);
        }
    }

    #[test]
    fn frame_rejects_out_of_range() {
        let t = Tensor::filled(3, 2, 2, 1.5);
        assert!(Frame::new(t).is_err());
    }

    #[test]
    fn depth_range_maps_invalid_to_minus_one() {
        let plane = [0.0, 1000.0, 3000.0];
        let r = DepthRange::from_values([&plane[..]]);
        assert_eq!(r.normalize(0.0), -1.0);
        assert_eq!(r.normalize(1000.0), -1.0);
        assert_eq!(r.normalize(3000.0), 1.0);
        assert_eq!(r.normalize(2000.0), 0.0);
    }
}
