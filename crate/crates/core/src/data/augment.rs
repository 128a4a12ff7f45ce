use serde::{Deserialize, Serialize};

use super::Frame;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Translation and rotation copies added to a training set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// `(dx, dy)` shifts in pixels; `dx` moves content right, `dy` down.
    pub translations: Vec<(i32, i32)>,
    /// Rotations about the image centre, in degrees (counter-clockwise).
    pub rotations_deg: Vec<f64>,
}

impl AugmentConfig {
    pub fn transform_count(&self) -> usize {
        self.translations.len() + self.rotations_deg.len()
    }
}

/// Returns the originals followed by one copy of every frame per configured
/// transform. Vacated pixels replicate the nearest border pixel.
pub fn augment(frames: &[Frame], config: &AugmentConfig) -> Result<Vec<Frame>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Parameter("augment needs at least one frame".into()))?;
    let (h, w) = (first.height() as i32, first.width() as i32);
    for &(dx, dy) in &config.translations {
        if dx.abs() >= w || dy.abs() >= h {
            return Err(Error::Parameter(format!(
                "translation ({dx}, {dy}) exceeds the {w}x{h} image extent"
            )));
        }
    }
    if let Some(r) = config.rotations_deg.iter().find(|r| !r.is_finite()) {
        return Err(Error::Parameter(format!("rotation {r} is not finite")));
    }
    let mut out = Vec::with_capacity(frames.len() * (1 + config.transform_count()));
    out.extend(frames.iter().cloned());
    for &(dx, dy) in &config.translations {
        out.extend(frames.iter().map(|f| translate(f, dx, dy)));
    }
    for &deg in &config.rotations_deg {
        out.extend(frames.iter().map(|f| rotate(f, deg)));
    }
    Ok(out)
}

pub(crate) fn translate(frame: &Frame, dx: i32, dy: i32) -> Frame {
    let src = frame.tensor();
    let (c, h, w) = src.shape();
    let mut t = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as usize;
            for x in 0..w {
                let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as usize;
                t.set(ch, y, x, src.get(ch, sy, sx));
            }
        }
    }
    Frame::clamped(t)
}

pub(crate) fn rotate(frame: &Frame, degrees: f64) -> Frame {
    let src = frame.tensor();
    let (c, h, w) = src.shape();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut t = Tensor::zeros(c, h, w);
    for y in 0..h {
        for x in 0..w {
            // inverse mapping: rotate the output coordinate back into the source
            let (ry, rx) = (y as f64 - cy, x as f64 - cx);
            let sx = cos * rx - sin * ry + cx;
            let sy = sin * rx + cos * ry + cy;
            for ch in 0..c {
                t.set(ch, y, x, bilinear_clamped(src.channel(ch), h, w, sy, sx));
            }
        }
    }
    Frame::clamped(t)
}

pub(crate) fn bilinear_clamped(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}
