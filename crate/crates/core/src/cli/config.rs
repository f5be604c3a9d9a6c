use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, QuantileSpec};
use crate::objectives::LossKind;
use crate::training::TrainConfig;
use crate::verification::DEFAULT_THRESHOLDS;

/// Everything one experiment needs, stored as a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetManifest,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Levels and weights used when training with the quantile loss.
    pub quantiles: QuantileSpec,
    /// Shared upper-quantile weights tried by `gridsearch`.
    pub grid: Vec<f64>,
    /// Reduced epoch budget per grid point, if set.
    pub grid_max_epochs: Option<usize>,
    /// Reduced number of runs per grid point, if set.
    pub grid_runs: Option<usize>,
    /// Event thresholds in mm/h.
    pub thresholds: Vec<f64>,
    /// Rate mapped to byte 255 in forecast panels, mm/h.
    pub panel_max_rate: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetManifest::default(),
            model: ModelConfig::default(),
            train: TrainConfig { loss: LossKind::MultiQuantile(QuantileSpec::default()), ..TrainConfig::default() },
            quantiles: QuantileSpec::default(),
            grid: vec![0.25, 0.5, 1.0, 2.0],
            grid_max_epochs: None,
            grid_runs: None,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            panel_max_rate: 30.0,
            output_dir: PathBuf::from("mqnowcast-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.quantiles.validate()?;
        if self.thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("thresholds must be finite"));
        }
        if !(self.panel_max_rate > 0.0) {
            return Err(Error::config("panel_max_rate must be positive"));
        }
        if self.model.input_frames != self.dataset.input_frames || self.model.lead_times != self.dataset.lead_times {
            return Err(Error::config("model and dataset disagree on input frames or lead times"));
        }
        Ok(())
    }

    /// Applies `--seed`: the dataset, the first training run and the model
    /// initialisation all follow it.
    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.model.seed = seed;
    }
}
