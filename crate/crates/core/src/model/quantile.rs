use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered quantile levels with one positive loss weight per level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileSpec {
    levels: Vec<f64>,
    weights: Vec<f64>,
}

impl QuantileSpec {
    pub fn new(levels: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let spec = Self { levels, weights };
        spec.validate()?;
        Ok(spec)
    }

    /// Levels {0.5, 0.9, 0.95} with the median weighted 1.0 and both upper
    /// quantiles sharing `upper_weight`.
    pub fn median_and_upper(upper_weight: f64) -> Self {
        Self {
            levels: vec![0.5, 0.9, 0.95],
            weights: vec![1.0, upper_weight, upper_weight],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::config("quantile spec needs at least one level"));
        }
        if self.levels.len() != self.weights.len() {
            return Err(Error::config(format!(
                "{} quantile levels but {} weights",
                self.levels.len(),
                self.weights.len()
            )));
        }
        if let Some(q) = self.levels.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
            return Err(Error::config(format!("quantile level {q} outside (0, 1)")));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("quantile levels must be strictly increasing"));
        }
        if let Some(w) = self.weights.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::config(format!("quantile weight {w} must be positive")));
        }
        Ok(())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Index of the level closest to `q`, if it lies within 1e-9.
    pub fn index_of(&self, q: f64) -> Option<usize> {
        self.levels.iter().position(|&l| (l - q).abs() < 1e-9)
    }

    /// Same levels with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            levels: self.levels.clone(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }
}

impl Default for QuantileSpec {
    fn default() -> Self {
        Self::median_and_upper(0.5)
    }
}
