//! Versioned JSON checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::Frame;
use crate::config::DataConfig;
use crate::data::PreprocessState;
use crate::error::{Error, Result};
use crate::model::{FusionModel, ModelConfig, SourceSpec};
use crate::params::ParamVector;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSource {
    pub spec: SourceSpec,
    pub input_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub task: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    /// Where the training data came from, so evaluation can reload it.
    pub data: DataConfig,
    pub frame: Frame,
    pub model: ModelConfig,
    pub sources: Vec<StoredSource>,
    pub class_weights: Vec<f64>,
    pub params: ParamVector<f64>,
    pub preprocess: PreprocessState,
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn sources(&self) -> Vec<(SourceSpec, usize)> {
        self.sources.iter().map(|s| (s.spec.clone(), s.input_dim)).collect()
    }

    pub fn to_model(&self) -> Result<FusionModel<f64>> {
        FusionModel::from_parts(
            self.frame.clone(),
            self.model.clone(),
            self.sources(),
            self.class_weights.clone(),
            self.params.clone(),
        )
    }

    pub fn stored_sources(model: &FusionModel<f64>) -> Vec<StoredSource> {
        model
            .sources()
            .iter()
            .map(|s| StoredSource { spec: s.spec.clone(), input_dim: s.input_dim })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Data(format!("invalid checkpoint {}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        if !ckpt.params.is_finite() {
            return Err(Error::NonFinite(format!("parameters of checkpoint {}", path.display())));
        }
        Ok(ckpt)
    }
}
