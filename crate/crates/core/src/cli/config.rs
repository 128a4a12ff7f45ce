use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::eval::Aggregation;
use crate::gan::TrainConfig;
use crate::segment::PipelineConfig;

/// Which modalities the segmentation stage runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModalitySelection {
    #[default]
    Rgbd,
    RgbOnly,
}

/// One file driving every stage of a run. Relative paths are resolved
/// against the directory of the file they appear in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset description (JSON, see `DatasetSpec`).
    pub dataset: Option<PathBuf>,
    pub output: PathBuf,
    /// Sequences to process; empty means every sequence under the dataset root.
    pub sequences: Vec<String>,
    pub modality: ModalitySelection,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub pipeline: PipelineConfig,
    pub aggregation: Aggregation,
    /// Seeds training and inversion.
    pub seed: u64,
    /// Worker threads for frame-parallel stages (0 = one per core).
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            output: PathBuf::from("out"),
            sequences: Vec::new(),
            modality: ModalitySelection::Rgbd,
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            pipeline: PipelineConfig::default(),
            aggregation: Aggregation::MeanOfFrames,
            seed: 0,
            workers: 0,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.dataset.as_mut() {
            resolve(base, d);
        }
        resolve(base, &mut cfg.output);
        for p in [&mut cfg.pipeline.rgb_checkpoint, &mut cfg.pipeline.depth_checkpoint]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        Ok(cfg)
    }

    /// Propagates the run seed to every stochastic stage.
    pub fn apply_seed(&mut self) {
        self.train.seed = self.seed;
        self.pipeline.inversion.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.pipeline.validate()
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.output.join("checkpoints")
    }

    pub fn masks_dir(&self) -> PathBuf {
        self.output.join("masks")
    }

    pub fn checkpoint_path(&self, sequence: &str, modality: crate::gan::Modality) -> PathBuf {
        self.checkpoint_dir().join(format!("{sequence}_{modality}.ckpt.json"))
    }
}
