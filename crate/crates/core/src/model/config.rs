use serde::{Deserialize, Serialize};

use super::QuantileSpec;
use crate::error::{Error, Result};

/// Shape and initialisation settings of the encoder-decoder network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of past frames fed to the network.
    pub input_frames: usize,
    /// Number of future frames predicted.
    pub lead_times: usize,
    /// Present for a quantile head, absent for a deterministic one.
    pub quantiles: Option<QuantileSpec>,
    pub base_channels: usize,
    /// Number of down/up stages.
    pub depth: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub attention: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_frames: 4,
            lead_times: 3,
            quantiles: None,
            base_channels: 16,
            depth: 2,
            grid_h: 32,
            grid_w: 32,
            attention: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_frames == 0 || self.lead_times == 0 || self.base_channels == 0 {
            return Err(Error::config("input_frames, lead_times and base_channels must be positive"));
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::config("grid dimensions must be positive"));
        }
        let div = 1usize
            .checked_shl(self.depth as u32)
            .ok_or_else(|| Error::config(format!("depth {} is too large", self.depth)))?;
        if self.grid_h % div != 0 || self.grid_w % div != 0 {
            return Err(Error::config(format!(
                "grid {}x{} is not divisible by 2^depth = {div}",
                self.grid_h, self.grid_w
            )));
        }
        if let Some(spec) = &self.quantiles {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn n_quantiles(&self) -> usize {
        self.quantiles.as_ref().map_or(1, QuantileSpec::len)
    }

    /// `L` for a deterministic head, `L·|Q|` for a quantile head.
    pub fn output_channels(&self) -> usize {
        self.lead_times * self.n_quantiles()
    }

    /// Channel width at encoder level `level`.
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn with_quantiles(mut self, spec: Option<QuantileSpec>) -> Self {
        self.quantiles = spec;
        self
    }
}
