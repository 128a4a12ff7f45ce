//! Binary H×W masks shared by motion and segmentation outputs.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(shape_err(format!(
                "mask buffer of {} cannot hold {height}x{width}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Data("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x) as u8);
            }
        }
        Self { height, width, bits }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.bits.len() as f64
        }
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(shape_err(format!(
                "masks {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn not(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    pub fn and(&self, other: &BinaryMask) -> Result<Self> {
        self.same_shape(other)?;
        Ok(self.zip(other, |a, b| a & b))
    }

    pub fn or(&self, other: &BinaryMask) -> Result<Self> {
        self.same_shape(other)?;
        Ok(self.zip(other, |a, b| a | b))
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(u8, u8) -> u8) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Nearest-neighbour resampling to a new size.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        Self::from_fn(height, width, |y, x| {
            let sy = (y * self.height) / height;
            let sx = (x * self.width) / width;
            self.get(sy, sx)
        })
    }

    fn window(&self, y: usize, x: usize, want: u8) -> bool {
        // 3×3 window, out-of-bounds pixels ignored
        let y0 = y.saturating_sub(1);
        let x0 = x.saturating_sub(1);
        let y1 = (y + 1).min(self.height - 1);
        let x1 = (x + 1).min(self.width - 1);
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                if self.bits[yy * self.width + xx] == want {
                    return true;
                }
            }
        }
        false
    }

    /// 3×3 erosion.
    pub fn erode(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| !self.window(y, x, 0))
    }

    /// 3×3 dilation.
    pub fn dilate(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.window(y, x, 1))
    }

    pub fn open(&self) -> Self {
        self.erode().dilate()
    }

    pub fn close(&self) -> Self {
        self.dilate().erode()
    }

    /// 8-bit grayscale export: 0 → 0, 1 → 255.
    pub fn to_u8_image(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b * 255).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_removes_isolated_pixel_and_keeps_block() {
        let m = BinaryMask::from_fn(10, 10, |y, x| (2..6).contains(&y) && (2..6).contains(&x) || (y, x) == (8, 8));
        let o = m.open();
        assert!(!o.get(8, 8));
        assert_eq!(o.count_ones(), 16);
    }

    #[test]
    fn close_fills_single_hole() {
        let m = BinaryMask::from_fn(8, 8, |y, x| (1..6).contains(&y) && (1..6).contains(&x) && (y, x) != (3, 3));
        assert!(m.close().get(3, 3));
    }

    #[test]
    fn rejects_non_binary_values() {
        assert!(BinaryMask::from_vec(1, 2, vec![0, 2]).is_err());
    }
}
