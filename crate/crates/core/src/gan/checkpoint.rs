use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{Discriminator, Generator};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Depth,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "depth" => Ok(Modality::Depth),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// A trained generator/discriminator pair with its provenance.
///
/// Stored as one JSON document; parameter buffers are base64-encoded
/// little-endian `f64`, so a save/load round trip is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub modality: Modality,
    pub scene: String,
    pub epoch: usize,
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl Checkpoint {
    pub fn new(
        generator: Generator,
        discriminator: Discriminator,
        config: TrainConfig,
        modality: Modality,
        scene: impl Into<String>,
        epoch: usize,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            modality,
            scene: scene.into(),
            epoch,
            config,
            generator,
            discriminator,
        }
    }

    pub fn with_tags(mut self, modality: Modality, scene: impl Into<String>) -> Self {
        self.modality = modality;
        self.scene = scene.into();
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint format version {}",
                ckpt.format_version
            )));
        }
        ckpt.generator.validate()?;
        ckpt.discriminator.validate()?;
        if ckpt.generator.config() != ckpt.discriminator.config() {
            return Err(Error::Data("generator and discriminator architectures differ".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::{generator_forward, LatentVector};
    use crate::nn::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = NetConfig {
            image_size: 16,
            latent_dim: 6,
            base_width: 3,
            layers: 3,
            ..NetConfig::default()
        };
        let g = Generator::new(cfg.clone(), &mut rng).unwrap();
        let d = Discriminator::new(cfg.clone(), &mut rng).unwrap();
        let tc = TrainConfig {
            model: cfg,
            ..TrainConfig::default()
        };
        Checkpoint::new(g, d, tc, Modality::Depth, "shadows", 3)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        c.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, c);
        let z = LatentVector::sample(6, &mut ChaCha8Rng::seed_from_u64(1));
        let a = generator_forward(&c.generator, &z).unwrap();
        let b = generator_forward(&back.generator, &z).unwrap();
        assert!(a
            .tensor()
            .data()
            .iter()
            .zip(b.tensor().data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn rejects_wrong_version_and_corrupt_shapes() {
        let mut c = sample();
        c.format_version = 99;
        assert!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).is_err());

        let c = sample();
        let mut v: serde_json::Value = serde_json::from_slice(&c.to_bytes().unwrap()).unwrap();
        v["generator"]["config"]["base_width"] = serde_json::json!(4);
        v["discriminator"]["config"]["base_width"] = serde_json::json!(4);
        assert!(Checkpoint::from_bytes(&serde_json::to_vec(&v).unwrap()).is_err());
    }

    #[test]
    fn modality_parses() {
        assert_eq!("rgb".parse::<Modality>().unwrap(), Modality::Rgb);
        assert!("fused".parse::<Modality>().is_err());
    }
}
