use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::error::{Error, Result};
use crate::objectives::LossKind;

/// Hard cap on epochs per run.
pub const MAX_EPOCHS_CAP: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub n_runs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mse,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            plateau_factor: 0.1,
            plateau_patience: 4,
            early_stop_patience: 15,
            max_epochs: MAX_EPOCHS_CAP,
            n_runs: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::config(format!("plateau_factor {} outside (0, 1)", self.plateau_factor)));
        }
        if self.early_stop_patience < self.plateau_patience {
            return Err(Error::config(format!(
                "early_stop_patience {} is below plateau_patience {}",
                self.early_stop_patience, self.plateau_patience
            )));
        }
        if self.max_epochs == 0 || self.max_epochs > MAX_EPOCHS_CAP {
            return Err(Error::config(format!("max_epochs {} outside 1..={MAX_EPOCHS_CAP}", self.max_epochs)));
        }
        if self.n_runs == 0 {
            return Err(Error::config("n_runs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_epsilon > 0.0) {
            return Err(Error::config("adam betas must lie in [0, 1) and epsilon be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, epsilon: self.adam_epsilon }
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }
}
