use serde::{Deserialize, Serialize};

use super::Archive;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `m` input frames followed by `L` target frames cut from one archive.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarSequence {
    /// `[m, H, W]`, mm per step.
    pub inputs: Tensor<f32>,
    /// `[L, H, W]`, mm per step.
    pub targets: Tensor<f32>,
    /// Archive index of the first input frame.
    pub timestamp_index: usize,
}

impl RadarSequence {
    pub fn input_frames(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn lead_times(&self) -> usize {
        self.targets.shape()[0]
    }

    /// Archive frames covered, as a half-open range.
    pub fn frame_range(&self) -> std::ops::Range<usize> {
        self.timestamp_index..self.timestamp_index + self.input_frames() + self.lead_times()
    }

    /// Fraction of pixels above zero in the final target frame.
    pub fn final_wet_fraction(&self) -> f64 {
        let [l, h, w] = [self.targets.shape()[0], self.targets.shape()[1], self.targets.shape()[2]];
        let last = &self.targets.values()[(l - 1) * h * w..];
        last.iter().filter(|&&v| v > 0.0).count() as f64 / (h * w) as f64
    }
}

/// Number of windows `window_archive` produces.
pub fn window_count(n_frames: usize, m: usize, l: usize, stride: usize) -> usize {
    if stride == 0 || n_frames < m + l {
        0
    } else {
        (n_frames - m - l) / stride + 1
    }
}

/// Overlapping windows starting every `stride` frames.
pub fn window_archive(archive: &Archive, m: usize, l: usize, stride: usize) -> Result<Vec<RadarSequence>> {
    if m == 0 || l == 0 || stride == 0 {
        return Err(Error::config("window sizes and stride must be positive"));
    }
    if archive.n_frames() < m + l {
        return Err(Error::Data(format!(
            "archive of {} frames is shorter than one window of {}",
            archive.n_frames(),
            m + l
        )));
    }
    let (h, w) = (archive.height(), archive.width());
    (0..window_count(archive.n_frames(), m, l, stride))
        .map(|k| {
            let t = k * stride;
            Ok(RadarSequence {
                inputs: Tensor::from_vec(vec![m, h, w], archive.frames(t, m).to_vec())?,
                targets: Tensor::from_vec(vec![l, h, w], archive.frames(t + m, l).to_vec())?,
                timestamp_index: t,
            })
        })
        .collect()
}

/// Keeps sequences whose final target frame is at least `wet_fraction` wet,
/// preserving order.
pub fn filter_wet(sequences: Vec<RadarSequence>, wet_fraction: f64) -> Vec<RadarSequence> {
    sequences.into_iter().filter(|s| s.final_wet_fraction() >= wet_fraction).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<RadarSequence>,
    pub val: Vec<RadarSequence>,
    pub test: Vec<RadarSequence>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Splits {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts { train: self.train.len(), val: self.val.len(), test: self.test.len() }
    }
}

/// Chronological three-way split.
///
/// The first `floor(n·train_fraction)` windows form the train block and the
/// rest the test block. Validation is the last `round(block·val_fraction)`
/// windows of the train block. A window is then dropped when its frames reach
/// the first frame of the following block, so no frame is shared across
/// splits.
pub fn split_chronological(sequences: Vec<RadarSequence>, train_fraction: f64, val_fraction: f64) -> Result<Splits> {
    if !(train_fraction > 0.0 && train_fraction < 1.0 && val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config(format!(
            "split fractions must lie in (0, 1), got train {train_fraction}, val {val_fraction}"
        )));
    }
    if sequences.windows(2).any(|w| w[0].timestamp_index >= w[1].timestamp_index) {
        return Err(Error::contract("sequences must be in increasing timestamp order"));
    }
    let n = sequences.len();
    let block = (n as f64 * train_fraction).floor() as usize;
    let n_val = (block as f64 * val_fraction).round() as usize;
    let n_train = block - n_val.min(block);

    let mut rest = sequences;
    let test = rest.split_off(block.min(n));
    let mut val = rest.split_off(n_train);
    let mut train = rest;

    if let Some(first) = val.first().map(|s| s.timestamp_index) {
        train.retain(|s| s.frame_range().end <= first);
    }
    if let Some(first) = test.first().map(|s| s.timestamp_index) {
        val.retain(|s| s.frame_range().end <= first);
        train.retain(|s| s.frame_range().end <= first);
    }
    let splits = Splits { train, val, test };
    let c = splits.counts();
    if c.train == 0 || c.val == 0 || c.test == 0 {
        return Err(Error::config(format!(
            "a split is empty after the boundary drop (train {}, val {}, test {})",
            c.train, c.val, c.test
        )));
    }
    Ok(splits)
}

/// Scale shared by every split, taken from the training data alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationStats {
    /// Largest training value in mm per step.
    pub train_max: f32,
}

impl NormalizationStats {
    pub fn normalize(&self, v: f32) -> f32 {
        v / self.train_max
    }

    pub fn denormalize(&self, v: f32) -> f32 {
        v * self.train_max
    }

    /// Normalised copy. Values above the training maximum are kept as is.
    pub fn apply(&self, seq: &RadarSequence) -> RadarSequence {
        let scale = |t: &Tensor<f32>| {
            let values = t.values().iter().map(|&v| self.normalize(v)).collect();
            Tensor::from_vec(t.shape().to_vec(), values).expect("same shape")
        };
        RadarSequence { inputs: scale(&seq.inputs), targets: scale(&seq.targets), timestamp_index: seq.timestamp_index }
    }
}

/// Maximum over all train input and target pixels.
pub fn fit_normalization(train: &[RadarSequence]) -> Result<NormalizationStats> {
    let max = train
        .iter()
        .flat_map(|s| s.inputs.values().iter().chain(s.targets.values()))
        .fold(0.0f32, |m, &v| m.max(v));
    if max <= 0.0 {
        return Err(Error::Data("training split has no positive pixel".into()));
    }
    Ok(NormalizationStats { train_max: max })
}

/// Accumulation per step to an hourly rate.
pub fn to_rate(value_per_step: f64, steps_per_hour: u32) -> f64 {
    value_per_step * steps_per_hour as f64
}

pub fn from_rate(rate: f64, steps_per_hour: u32) -> f64 {
    rate / steps_per_hour as f64
}

/// Stacks the chosen sequences into `[B, m, H, W]` inputs and `[B, L, H, W]`
/// targets, normalising when `stats` is given.
pub fn stack_batch(
    sequences: &[RadarSequence],
    indices: &[usize],
    stats: Option<&NormalizationStats>,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = indices
        .first()
        .map(|&i| &sequences[i])
        .ok_or_else(|| Error::contract("cannot stack an empty batch"))?;
    let (in_shape, tg_shape) = (first.inputs.shape().to_vec(), first.targets.shape().to_vec());
    let mut xs = Vec::with_capacity(indices.len() * first.inputs.len());
    let mut ys = Vec::with_capacity(indices.len() * first.targets.len());
    for &i in indices {
        let s = &sequences[i];
        if s.inputs.shape() != in_shape.as_slice() || s.targets.shape() != tg_shape.as_slice() {
            return Err(Error::dim("sequences in a batch differ in shape"));
        }
        match stats {
            Some(st) => {
                xs.extend(s.inputs.values().iter().map(|&v| st.normalize(v)));
                ys.extend(s.targets.values().iter().map(|&v| st.normalize(v)));
            }
            None => {
                xs.extend_from_slice(s.inputs.values());
                ys.extend_from_slice(s.targets.values());
            }
        }
    }
    let b = indices.len();
    let x = Tensor::from_vec([vec![b], in_shape].concat(), xs)?;
    let y = Tensor::from_vec([vec![b], tg_shape].concat(), ys)?;
    Ok((x, y))
}
