//! Run configuration: built-in defaults, then a JSON file, then flags.

use std::path::Path;

use hybridcnn::data::PrepareSpec;
use hybridcnn::ml::{ForestConfig, HingeConfig, KnnConfig};
use hybridcnn::model::HybridModelConfig;
use hybridcnn::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlConfig {
    pub forest: ForestConfig,
    pub knn: KnnConfig,
    pub hinge: HingeConfig,
    /// Cross-validation folds; below 2 means holdout on `--test-features`.
    pub folds: usize,
    pub seed: u64,
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig {
            forest: ForestConfig::default(),
            knn: KnnConfig::default(),
            hinge: HingeConfig::default(),
            folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides every per-section seed.
    pub seed: Option<u64>,
    pub model: HybridModelConfig,
    pub train: TrainConfig,
    pub data: PrepareSpec,
    pub ml: MlConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, Failure> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::path(path, e))?;
        let mut c: RunConfig =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        if let Some(s) = c.seed {
            c.set_seed(s);
        }
        Ok(c)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.model.seed = seed;
        self.train.seed = seed;
        self.data.split.seed = seed;
        self.ml.seed = seed;
        self.ml.forest.seed = seed;
        self.ml.hinge.seed = seed;
    }

    /// The seed reported for the run.
    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.model.seed)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.model.validate().map_err(Failure::from)?;
        self.train.validate().map_err(Failure::from)?;
        if !(0.0..1.0).contains(&self.data.validation_fraction) {
            return Err(Failure::config(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.data.validation_fraction
            )));
        }
        Ok(())
    }
}
