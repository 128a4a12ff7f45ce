//! Dense optical flow and the mean-magnitude motion mask.
//!
//! The baseline estimator is Horn–Schunck on grayscale frames, run
//! coarse-to-fine over an image pyramid with repeated warping at each
//! level. Other estimators plug in through [`FlowEstimator`].

use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{shape_err, Error, Result};
use crate::mask::BinaryMask;

/// Per-pixel displacement from the previous frame to the current one:
/// `curr(x + u, y + v) ≈ prev(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return Err(shape_err(format!(
                "flow components of {} and {} values for {height}x{width}",
                u.len(),
                v.len()
            )));
        }
        Ok(Self { height, width, u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.u.iter().zip(&self.v).map(|(a, b)| (a * a + b * b).sqrt())
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitudes().sum::<f64>() / (self.height * self.width) as f64
    }

    /// HSV flow colouring (hue = direction, saturation = magnitude relative
    /// to the maximum) as interleaved 8-bit RGB.
    pub fn to_color(&self) -> Vec<u8> {
        let max = self.magnitudes().fold(0.0, f64::max).max(1e-9);
        let mut out = Vec::with_capacity(self.u.len() * 3);
        for (&u, &v) in self.u.iter().zip(&self.v) {
            let mag = (u * u + v * v).sqrt() / max;
            let hue = (v.atan2(u).to_degrees() + 360.0) % 360.0;
            out.extend(hsv_to_rgb(hue, mag.min(1.0), 1.0));
        }
        out
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|t| ((t + m) * 255.0).round() as u8)
}

/// Binary motion mask: 1 where the flow magnitude is below the threshold
/// (static), 0 otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionMask {
    pub mask: BinaryMask,
    /// Mean flow magnitude of the field the mask was computed from.
    pub threshold_used: f64,
    /// The field was (near) static and the mask was set to all-static.
    pub degenerate: bool,
}

/// Below this mean magnitude (pixels) a field is treated as fully static.
pub const STATIC_EPSILON: f64 = 1e-3;

/// Applies the `magnitude < threshold → 1` rule pixel by pixel.
pub fn threshold_flow(flow: &FlowField, threshold: f64) -> BinaryMask {
    let bits = flow.magnitudes().map(|m| (m < threshold) as u8).collect();
    BinaryMask::from_vec(flow.height, flow.width, bits).expect("flow shape")
}

/// Motion mask with the mean-magnitude threshold.
pub fn motion_mask(flow: &FlowField) -> Result<MotionMask> {
    motion_mask_with_epsilon(flow, STATIC_EPSILON)
}

pub fn motion_mask_with_epsilon(flow: &FlowField, epsilon: f64) -> Result<MotionMask> {
    if flow.u.iter().chain(&flow.v).any(|x| !x.is_finite()) {
        return Err(Error::Data("flow field contains non-finite values".into()));
    }
    let t = flow.mean_magnitude();
    if t < epsilon {
        return Ok(MotionMask {
            mask: BinaryMask::ones(flow.height, flow.width),
            threshold_used: t,
            degenerate: true,
        });
    }
    Ok(MotionMask {
        mask: threshold_flow(flow, t),
        threshold_used: t,
        degenerate: false,
    })
}

/// Swaps static and moving labels; the threshold is kept.
pub fn complement(mask: &MotionMask) -> MotionMask {
    MotionMask {
        mask: mask.mask.not(),
        threshold_used: mask.threshold_used,
        degenerate: mask.degenerate,
    }
}

pub trait FlowEstimator: Send + Sync {
    fn estimate(&self, prev: &Frame, curr: &Frame) -> Result<FlowField>;
}

/// Coarse-to-fine Horn–Schunck with warping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HornSchunck {
    /// Maximum pyramid levels (the coarsest level keeps at least 8 pixels per side).
    pub levels: usize,
    /// Smoothness weight, in units of 8-bit intensity.
    pub alpha: f64,
    pub warps: usize,
    pub iterations: usize,
}

impl Default for HornSchunck {
    fn default() -> Self {
        Self {
            levels: 3,
            alpha: 8.0,
            warps: 4,
            iterations: 60,
        }
    }
}

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    #[inline]
    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn bilinear(&self, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let a = self.at(y0, x0) * (1.0 - fx) + self.at(y0, x0 + 1) * fx;
        let b = self.at(y0 + 1, x0) * (1.0 - fx) + self.at(y0 + 1, x0 + 1) * fx;
        a * (1.0 - fy) + b * fy
    }

    /// Separable [1 2 1]/4 blur.
    fn blur(&self) -> Plane {
        let mut tmp = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let (yi, xi) = (y as isize, x as isize);
                tmp[y * self.w + x] = 0.25 * self.at(yi, xi - 1) + 0.5 * self.at(yi, xi) + 0.25 * self.at(yi, xi + 1);
            }
        }
        let t = Plane {
            h: self.h,
            w: self.w,
            data: tmp,
        };
        let mut out = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let (yi, xi) = (y as isize, x as isize);
                out[y * self.w + x] = 0.25 * t.at(yi - 1, xi) + 0.5 * t.at(yi, xi) + 0.25 * t.at(yi + 1, xi);
            }
        }
        Plane {
            h: self.h,
            w: self.w,
            data: out,
        }
    }

    fn downsample(&self) -> Plane {
        let b = self.blur();
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (yi, xi) = (2 * y as isize, 2 * x as isize);
                data.push(0.25 * (b.at(yi, xi) + b.at(yi, xi + 1) + b.at(yi + 1, xi) + b.at(yi + 1, xi + 1)));
            }
        }
        Plane { h, w, data }
    }
}

fn upsample_flow(u: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let src = Plane {
        h,
        w,
        data: u.to_vec(),
    };
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let scale = ow as f64 / w as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            out.push(scale * src.bilinear((y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5));
        }
    }
    out
}

// Horn–Schunck neighbourhood average: 1/6 for edge neighbours, 1/12 for corners.
fn hs_average(p: &Plane, out: &mut [f64]) {
    for y in 0..p.h {
        for x in 0..p.w {
            let (yi, xi) = (y as isize, x as isize);
            let edges = p.at(yi - 1, xi) + p.at(yi + 1, xi) + p.at(yi, xi - 1) + p.at(yi, xi + 1);
            let corners = p.at(yi - 1, xi - 1) + p.at(yi - 1, xi + 1) + p.at(yi + 1, xi - 1) + p.at(yi + 1, xi + 1);
            out[y * p.w + x] = edges / 6.0 + corners / 12.0;
        }
    }
}

impl HornSchunck {
    fn refine(&self, i1: &Plane, i2: &Plane, u: &mut [f64], v: &mut [f64]) {
        let (h, w) = (i1.h, i1.w);
        let n = h * w;
        let a2 = self.alpha * self.alpha;
        let mut ix = vec![0.0; n];
        let mut iy = vec![0.0; n];
        let mut it = vec![0.0; n];
        let mut ubar = vec![0.0; n];
        let mut vbar = vec![0.0; n];
        for _ in 0..self.warps {
            let mut warped = Plane {
                h,
                w,
                data: vec![0.0; n],
            };
            for y in 0..h {
                for x in 0..w {
                    let k = y * w + x;
                    warped.data[k] = i2.bilinear(y as f64 + v[k], x as f64 + u[k]);
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let (yi, xi) = (y as isize, x as isize);
                    let k = y * w + x;
                    // central differences averaged over both images
                    ix[k] = 0.25
                        * (i1.at(yi, xi + 1) - i1.at(yi, xi - 1) + warped.at(yi, xi + 1) - warped.at(yi, xi - 1));
                    iy[k] = 0.25
                        * (i1.at(yi + 1, xi) - i1.at(yi - 1, xi) + warped.at(yi + 1, xi) - warped.at(yi - 1, xi));
                    it[k] = warped.data[k] - i1.data[k];
                }
            }
            let u0 = u.to_vec();
            let v0 = v.to_vec();
            for _ in 0..self.iterations {
                hs_average(
                    &Plane {
                        h,
                        w,
                        data: u.to_vec(),
                    },
                    &mut ubar,
                );
                hs_average(
                    &Plane {
                        h,
                        w,
                        data: v.to_vec(),
                    },
                    &mut vbar,
                );
                for k in 0..n {
                    let r = ix[k] * (ubar[k] - u0[k]) + iy[k] * (vbar[k] - v0[k]) + it[k];
                    let d = a2 + ix[k] * ix[k] + iy[k] * iy[k];
                    u[k] = ubar[k] - ix[k] * r / d;
                    v[k] = vbar[k] - iy[k] * r / d;
                }
            }
        }
    }
}

impl FlowEstimator for HornSchunck {
    fn estimate(&self, prev: &Frame, curr: &Frame) -> Result<FlowField> {
        prev.tensor().ensure_same_shape(curr.tensor(), "flow frames")?;
        let (h, w) = (prev.height(), prev.width());
        let to_plane = |f: &Frame| Plane {
            h,
            w,
            data: f.to_gray().into_iter().map(|g| g * 255.0).collect(),
        };
        let mut p1 = vec![to_plane(prev).blur()];
        let mut p2 = vec![to_plane(curr).blur()];
        while p1.len() < self.levels.max(1) {
            let last = p1.last().expect("non-empty");
            if last.h / 2 < 8 || last.w / 2 < 8 {
                break;
            }
            let next1 = last.downsample();
            let next2 = p2.last().expect("non-empty").downsample();
            p1.push(next1);
            p2.push(next2);
        }
        let coarsest = p1.last().expect("non-empty");
        let (mut ch, mut cw) = (coarsest.h, coarsest.w);
        let mut u = vec![0.0; ch * cw];
        let mut v = vec![0.0; ch * cw];
        for level in (0..p1.len()).rev() {
            let (lh, lw) = (p1[level].h, p1[level].w);
            if (lh, lw) != (ch, cw) {
                u = upsample_flow(&u, ch, cw, lh, lw);
                v = upsample_flow(&v, ch, cw, lh, lw);
                (ch, cw) = (lh, lw);
            }
            self.refine(&p1[level], &p2[level], &mut u, &mut v);
        }
        FlowField::new(h, w, u, v)
    }
}

/// Flow from `prev` to `curr` with the default estimator.
pub fn estimate_flow(prev: &Frame, curr: &Frame) -> Result<FlowField> {
    HornSchunck::default().estimate(prev, curr)
}
