//! Minimal convolutional networks with hand-written backpropagation.

mod adam;
mod discriminator;
mod generator;
pub mod layers;

pub use adam::Adam;
pub use discriminator::{DiscTrace, Discriminator};
pub use generator::{GenTrace, Generator};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture shared by the generator and discriminator of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Square image side in pixels; must be divisible by `2^layers`.
    pub image_size: usize,
    pub channels: usize,
    pub latent_dim: usize,
    /// Channel count of the first discriminator layer; doubles per layer.
    pub base_width: usize,
    /// Number of strided convolutions in D (and transposed convolutions in G).
    pub layers: usize,
    /// 0-based discriminator layer whose activation is used as `l(x)`.
    /// Defaults to the second-to-last convolution.
    pub feature_layer: Option<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 3,
            latent_dim: 100,
            base_width: 64,
            layers: 5,
            feature_layer: None,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.base_width == 0 || self.channels == 0 || self.latent_dim == 0 {
            return Err(Error::Parameter(
                "layers, base_width, channels and latent_dim must be positive".into(),
            ));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << self.layers) {
            return Err(Error::Parameter(format!(
                "image size {} is not divisible by 2^{}",
                self.image_size, self.layers
            )));
        }
        if self.feature_layer() >= self.layers {
            return Err(Error::Parameter(format!(
                "feature layer {} out of range for {} layers",
                self.feature_layer(),
                self.layers
            )));
        }
        Ok(())
    }

    pub fn feature_layer(&self) -> usize {
        self.feature_layer
            .unwrap_or_else(|| self.layers.saturating_sub(2))
    }

    /// Spatial side of the deepest feature map.
    pub fn bottom_size(&self) -> usize {
        self.image_size >> self.layers
    }

    pub fn top_channels(&self) -> usize {
        self.base_width << (self.layers - 1)
    }
}

/// Gradient buffers aligned with a network's parameter buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads(pub Vec<Vec<f64>>);

impl ParamGrads {
    pub fn zeros_like(sizes: &[usize]) -> Self {
        Self(sizes.iter().map(|&n| vec![0.0; n]).collect())
    }

    /// Weight and bias gradient buffers of layer `i`.
    pub(crate) fn layer(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let (a, b) = self.0[2 * i..2 * i + 2].split_at_mut(1);
        (&mut a[0], &mut b[0])
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Common parameter access for both networks.
pub trait Parameterized {
    fn param_buffers(&self) -> Vec<&[f64]>;
    fn param_buffers_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_sizes(&self) -> Vec<usize> {
        self.param_buffers().iter().map(|b| b.len()).collect()
    }

    fn zero_grads(&self) -> ParamGrads {
        ParamGrads::zeros_like(&self.param_sizes())
    }

    fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    /// Order-sensitive FNV-1a digest of the exact parameter bits.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for buf in self.param_buffers() {
            for v in buf {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Serializes `f64` buffers as base64 of their little-endian bytes, which
/// is compact and reproduces every bit on load.
pub(crate) mod f64_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text.as_bytes()).map_err(D::Error::custom)?;
        if bytes.len() % 8 != 0 {
            return Err(D::Error::custom("parameter buffer is not a whole number of f64s"));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
