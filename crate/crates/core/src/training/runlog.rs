use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio::{read_csv, write_csv};
use crate::error::{Error, Result};

/// One line of a [`RunLog`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate the epoch was trained with.
    pub lr: f64,
    /// Wall time, the only field that differs between identical runs.
    pub seconds: f64,
}

/// Per-epoch history of one training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_loss).collect()
    }

    /// Lowest validation loss, ignoring NaN.
    pub fn best_val_loss(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_loss).filter(|v| !v.is_nan()).reduce(f64::min)
    }

    /// Same records with the wall time zeroed, for comparing runs.
    pub fn without_timing(&self) -> RunLog {
        RunLog {
            records: self.records.iter().map(|r| EpochRecord { seconds: 0.0, ..*r }).collect(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        write_csv(&self.records, &["epoch", "train_loss", "val_loss", "lr", "seconds"])
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Ok(Self { records: read_csv(text)? })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}
