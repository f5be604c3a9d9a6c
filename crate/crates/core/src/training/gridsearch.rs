use serde::{Deserialize, Serialize};

use super::{predict, train_best_of, TrainConfig};
use crate::data::{stack_batch, NormalizationStats, Splits};
use crate::csvio::write_csv;
use crate::error::{Error, Result};
use crate::model::{extract_quantile, ModelConfig, QuantileSpec};
use crate::objectives::LossKind;
use crate::verification::eval_regression;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub weight: f64,
    pub val_mse_median: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearch {
    pub rows: Vec<GridRow>,
    pub best_weight: f64,
}

impl GridSearch {
    pub fn to_csv(&self) -> Result<String> {
        write_csv(&self.rows, &["weight", "val_mse_median"])
    }
}

/// `base` with the median weighted 1.0 and every other level weighted
/// `upper_weight`.
pub fn grid_spec(base: &QuantileSpec, upper_weight: f64) -> Result<QuantileSpec> {
    let median = base.index_of(0.5).ok_or_else(|| Error::config("quantile spec has no 0.5 level"))?;
    let weights = (0..base.len()).map(|i| if i == median { 1.0 } else { upper_weight }).collect();
    QuantileSpec::new(base.levels().to_vec(), weights)
}

/// Weight with the lowest validation MSE, ties to the smaller weight.
pub fn argmin_weight(rows: &[GridRow]) -> Option<f64> {
    rows.iter()
        .filter(|r| !r.val_mse_median.is_nan())
        .min_by(|a, b| a.val_mse_median.total_cmp(&b.val_mse_median).then(a.weight.total_cmp(&b.weight)))
        .map(|r| r.weight)
}

/// Trains a best-of-n quantile model per grid weight and scores the median
/// head by validation MSE in normalised units.
pub fn grid_search_weights(
    grid: &[f64],
    model: &ModelConfig,
    splits: &Splits,
    stats: &NormalizationStats,
    cfg: &TrainConfig,
) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(Error::config("weight grid is empty"));
    }
    let base = cfg.loss.quantiles().ok_or_else(|| Error::config("grid search needs the quantile loss"))?;
    let median = base.index_of(0.5).ok_or_else(|| Error::config("quantile spec has no 0.5 level"))?;
    let idx: Vec<usize> = (0..splits.val.len()).collect();
    let (_, targets) = stack_batch(&splits.val, &idx, Some(stats))?;

    let mut rows = Vec::with_capacity(grid.len());
    for &weight in grid {
        let spec = grid_spec(base, weight)?;
        let run_cfg = cfg.clone().with_loss(LossKind::MultiQuantile(spec.clone()));
        let best = train_best_of(model, splits, stats, &run_cfg)?;
        let ckpt = &best.best().best;
        let out = predict(&ckpt.params, &ckpt.model, &splits.val, stats, cfg.batch_size)?;
        let med = extract_quantile(&out, median, spec.len())?;
        rows.push(GridRow { weight, val_mse_median: eval_regression(&med, &targets)?.mse });
    }
    let best_weight = argmin_weight(&rows).ok_or_else(|| Error::Training { message: "every grid point produced NaN".into(), log: None })?;
    Ok(GridSearch { rows, best_weight })
}
