//! Synthetic radar archives, the NWQ1 container, and preprocessing:
//! windowing, the wet-pixel filter, chronological splitting and max
//! normalisation.

mod archive;
mod generator;
mod pipeline;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use archive::{read_archive, write_archive, Archive, ARCHIVE_HEADER_LEN, ARCHIVE_MAGIC};
pub use generator::{advection_velocity, generate_archive, StormParams};
pub use pipeline::{
    filter_wet, fit_normalization, from_rate, split_chronological, stack_batch, to_rate, window_archive, window_count,
    NormalizationStats, RadarSequence, SplitCounts, Splits,
};

use crate::error::{Error, Result};

/// Everything needed to rebuild a dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub steps_per_hour: u32,
    pub input_frames: usize,
    pub lead_times: usize,
    pub stride: usize,
    /// Minimum wet fraction of the final target frame.
    pub wet_fraction: f64,
    pub train_fraction: f64,
    /// Share of the train block held out, from its tail, for validation.
    pub val_fraction: f64,
    pub generator: StormParams,
    /// An NWQ1 file to read instead of generating.
    pub source: Option<String>,
    /// Split sizes, filled in once the dataset is built.
    pub counts: Option<SplitCounts>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 5000,
            grid_h: 32,
            grid_w: 32,
            steps_per_hour: 12,
            input_frames: 4,
            lead_times: 3,
            stride: 1,
            wet_fraction: 0.5,
            train_fraction: 0.75,
            val_fraction: 0.1,
            generator: StormParams::default(),
            source: None,
            counts: None,
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.wet_fraction) {
            return Err(Error::config(format!("wet_fraction {} outside [0, 1]", self.wet_fraction)));
        }
        if self.input_frames == 0 || self.lead_times == 0 || self.stride == 0 {
            return Err(Error::config("input_frames, lead_times and stride must be positive"));
        }
        if self.steps_per_hour == 0 {
            return Err(Error::config("steps_per_hour must be at least 1"));
        }
        self.generator.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Generates the archive, or reads `source` when set.
    pub fn archive(&self) -> Result<Archive> {
        self.validate()?;
        match &self.source {
            Some(path) => read_archive(path),
            None => generate_archive(self.seed, self.n_frames, self.grid_h, self.grid_w, self.steps_per_hour, &self.generator),
        }
    }
}

/// Filtered, split and normalisation-fitted windows of one archive.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub splits: Splits,
    pub stats: NormalizationStats,
    pub steps_per_hour: u32,
}

impl Dataset {
    pub fn build(manifest: &DatasetManifest) -> Result<Self> {
        let archive = manifest.archive()?;
        Self::from_archive(manifest, &archive)
    }

    /// Window, filter, split and fit. The returned manifest records the split
    /// sizes.
    pub fn from_archive(manifest: &DatasetManifest, archive: &Archive) -> Result<Self> {
        manifest.validate()?;
        let windows = window_archive(archive, manifest.input_frames, manifest.lead_times, manifest.stride)?;
        let wet = filter_wet(windows, manifest.wet_fraction);
        let splits = split_chronological(wet, manifest.train_fraction, manifest.val_fraction)?;
        let stats = fit_normalization(&splits.train)?;
        let mut manifest = manifest.clone();
        manifest.counts = Some(splits.counts());
        manifest.grid_h = archive.height();
        manifest.grid_w = archive.width();
        manifest.n_frames = archive.n_frames();
        manifest.steps_per_hour = archive.steps_per_hour();
        Ok(Self { manifest, splits, stats, steps_per_hour: archive.steps_per_hour() })
    }
}
