//! Regression scores in normalised units and thresholded event scores in
//! mm/h.
//!
//! Event scores pool confusion counts per (threshold, lead time) over the
//! whole test set, score each lead time, then average the scores over lead
//! times. Undefined CSI, POD and FAR are `None` (an empty CSV cell) and are
//! left out of the average; MCC with a zero factor under the root is 0.

use serde::{Deserialize, Serialize};

use crate::data::{stack_batch, to_rate, NormalizationStats, RadarSequence};
use crate::error::{Error, Result};
use crate::model::{extract_quantile, ModelConfig};
use crate::tensor::Tensor;
use crate::csvio::write_csv;

/// Rain-rate thresholds in mm/h.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 10.0, 20.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub mse: f64,
    pub mae: f64,
}

/// Mean squared and absolute error over every element of two equally shaped
/// tensors whose leading axis is the sample.
pub fn eval_regression(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<Regression> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Err(Error::contract("cannot score an empty test set"));
    }
    let (mut se, mut ae) = (0.0f64, 0.0f64);
    for (&p, &y) in pred.values().iter().zip(target.values()) {
        let e = y as f64 - p as f64;
        se += e * e;
        ae += e.abs();
    }
    let n = pred.len() as f64;
    Ok(Regression { mse: se / n, mae: ae / n })
}

/// `v ≥ threshold` per pixel.
pub fn binarize(field: &[f64], threshold: f64) -> Vec<bool> {
    field.iter().map(|&v| v >= threshold).collect()
}

/// Hits, false alarms, misses and correct negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub r#fn: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.r#fn + self.tn
    }

    /// Observed events.
    pub fn observed(&self) -> u64 {
        self.tp + self.r#fn
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.r#fn += other.r#fn;
        self.tn += other.tn;
    }
}

/// Adds one count per pixel pair.
pub fn accumulate_confusion(pred: &[bool], obs: &[bool], counts: &mut ConfusionCounts) -> Result<()> {
    if pred.len() != obs.len() {
        return Err(Error::dim(format!("masks of {} and {} pixels", pred.len(), obs.len())));
    }
    for (&p, &o) in pred.iter().zip(obs) {
        match (p, o) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.r#fn += 1,
            (false, false) => counts.tn += 1,
        }
    }
    Ok(())
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn csi(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fp + c.r#fn)
}

pub fn pod(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.r#fn)
}

pub fn far(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.fp, c.tp + c.fp)
}

pub fn mcc(c: &ConfusionCounts) -> f64 {
    let [tp, fp, fn_, tn] = [c.tp, c.fp, c.r#fn, c.tn].map(|v| v as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventScores {
    pub csi: Option<f64>,
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub mcc: f64,
}

impl EventScores {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        Self { csi: csi(c), pod: pod(c), far: far(c), mcc: mcc(c) }
    }

    /// Unweighted mean over lead times, skipping undefined values.
    pub fn mean(scores: &[EventScores]) -> Self {
        fn avg(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
            let v: Vec<f64> = vals.flatten().collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        }
        Self {
            csi: avg(scores.iter().map(|s| s.csi)),
            pod: avg(scores.iter().map(|s| s.pod)),
            far: avg(scores.iter().map(|s| s.far)),
            mcc: avg(scores.iter().map(|s| Some(s.mcc))).unwrap_or(0.0),
        }
    }
}

/// Scores of one output at one threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdReport {
    pub threshold: f64,
    /// Pooled counts per lead time.
    pub counts: Vec<ConfusionCounts>,
    pub per_lead: Vec<EventScores>,
    pub mean: EventScores,
}

/// One forecast field of one model: the deterministic output or a quantile.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadReport {
    pub model: String,
    pub output: String,
    pub regression: Regression,
    pub thresholds: Vec<ThresholdReport>,
}

/// Name of a quantile output, e.g. `q0.95`.
pub fn quantile_label(q: f64) -> String {
    format!("q{q}")
}

pub const DETERMINISTIC_LABEL: &str = "deterministic";

/// Splits a network output `[N, L·|Q|, H, W]` into named `[N, L, H, W]`
/// fields.
pub fn output_heads(model: &ModelConfig, output: &Tensor<f32>) -> Result<Vec<(String, Tensor<f32>)>> {
    match &model.quantiles {
        None => Ok(vec![(DETERMINISTIC_LABEL.to_string(), output.clone())]),
        Some(spec) => spec
            .levels()
            .iter()
            .enumerate()
            .map(|(i, &q)| Ok((quantile_label(q), extract_quantile(output, i, spec.len())?)))
            .collect(),
    }
}

/// The field of quantile `q`; a contract error when the model lacks it.
pub fn quantile_head(model: &ModelConfig, output: &Tensor<f32>, q: f64) -> Result<Tensor<f32>> {
    let spec = model
        .quantiles
        .as_ref()
        .ok_or_else(|| Error::contract(format!("deterministic model has no quantile {q} output")))?;
    let i = spec.index_of(q).ok_or_else(|| Error::contract(format!("model has no quantile {q} output")))?;
    extract_quantile(output, i, spec.len())
}

/// Fraction of target values at or below the forecast.
pub fn coverage(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Err(Error::contract("cannot measure coverage on an empty set"));
    }
    let hits = pred.values().iter().zip(target.values()).filter(|(p, y)| y <= p).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Fraction of pixels where a lower quantile exceeds a higher one.
pub fn crossing_rate(lower: &Tensor<f32>, upper: &Tensor<f32>) -> Result<f64> {
    if lower.shape() != upper.shape() || lower.is_empty() {
        return Err(Error::dim("crossing rate needs two equally shaped, non-empty fields"));
    }
    let n = lower.values().iter().zip(upper.values()).filter(|(l, u)| l > u).count();
    Ok(n as f64 / lower.len() as f64)
}

/// Normalised test targets stacked to `[N, L, H, W]`.
pub fn stack_targets(test: &[RadarSequence], stats: &NormalizationStats) -> Result<Tensor<f32>> {
    let idx: Vec<usize> = (0..test.len()).collect();
    Ok(stack_batch(test, &idx, Some(stats))?.1)
}

/// Scores every head of one model on the test split.
///
/// `heads` hold normalised forecasts `[N, L, H, W]` aligned with `test`.
/// Regression is scored in normalised units, events after converting both
/// fields to mm/h.
pub fn eval_events(
    model_name: &str,
    heads: &[(String, Tensor<f32>)],
    test: &[RadarSequence],
    stats: &NormalizationStats,
    steps_per_hour: u32,
    thresholds: &[f64],
) -> Result<Vec<HeadReport>> {
    if test.is_empty() {
        return Err(Error::contract("cannot score an empty test set"));
    }
    let targets = stack_targets(test, stats)?;
    let [n, lead, h, w] = targets.dims4()?;
    let p = h * w;
    let scale = stats.train_max as f64;
    // Observed rates come from the raw archive values.
    let obs_rate: Vec<f64> = test
        .iter()
        .flat_map(|s| s.targets.values().iter().map(|&v| to_rate(v as f64, steps_per_hour)))
        .collect();

    let mut reports = Vec::with_capacity(heads.len());
    for (output, field) in heads {
        if field.shape() != targets.shape() {
            return Err(Error::dim(format!("{model_name}/{output}: forecast {:?} vs target {:?}", field.shape(), targets.shape())));
        }
        let regression = eval_regression(field, &targets)?;
        let pred_rate: Vec<f64> = field.values().iter().map(|&v| to_rate(v as f64 * scale, steps_per_hour)).collect();
        let mut per_threshold = Vec::with_capacity(thresholds.len());
        for &threshold in thresholds {
            let mut counts = vec![ConfusionCounts::default(); lead];
            for i in 0..n {
                for (l, c) in counts.iter_mut().enumerate() {
                    let at = (i * lead + l) * p;
                    let pm = binarize(&pred_rate[at..at + p], threshold);
                    let om = binarize(&obs_rate[at..at + p], threshold);
                    accumulate_confusion(&pm, &om, c)?;
                }
            }
            let per_lead: Vec<EventScores> = counts.iter().map(EventScores::from_counts).collect();
            let mean = EventScores::mean(&per_lead);
            per_threshold.push(ThresholdReport { threshold, counts, per_lead, mean });
        }
        reports.push(HeadReport { model: model_name.to_string(), output: output.clone(), regression, thresholds: per_threshold });
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub output: String,
    pub threshold: f64,
    pub csi: Option<f64>,
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub mcc: f64,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub model: String,
    pub output: String,
    pub threshold: f64,
    /// 1 for the first forecast frame.
    pub lead_time: usize,
    pub csi: Option<f64>,
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub mcc: f64,
}

/// Scores of several models on one test split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvaluationReport {
    pub heads: Vec<HeadReport>,
}

impl EvaluationReport {
    pub fn head(&self, model: &str, output: &str) -> Option<&HeadReport> {
        self.heads.iter().find(|h| h.model == model && h.output == output)
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.heads
            .iter()
            .flat_map(|h| {
                h.thresholds.iter().map(move |t| SummaryRow {
                    model: h.model.clone(),
                    output: h.output.clone(),
                    threshold: t.threshold,
                    csi: t.mean.csi,
                    pod: t.mean.pod,
                    far: t.mean.far,
                    mcc: t.mean.mcc,
                    mse: h.regression.mse,
                    mae: h.regression.mae,
                })
            })
            .collect()
    }

    pub fn curve_rows(&self) -> Vec<CurveRow> {
        let mut rows = Vec::new();
        for h in &self.heads {
            for t in &h.thresholds {
                for (l, s) in t.per_lead.iter().enumerate() {
                    rows.push(CurveRow {
                        model: h.model.clone(),
                        output: h.output.clone(),
                        threshold: t.threshold,
                        lead_time: l + 1,
                        csi: s.csi,
                        pod: s.pod,
                        far: s.far,
                        mcc: s.mcc,
                    });
                }
            }
        }
        rows
    }

    pub fn summary_csv(&self) -> Result<String> {
        write_csv(&self.summary_rows(), &["model", "output", "threshold", "csi", "pod", "far", "mcc", "mse", "mae"])
    }

    pub fn curves_csv(&self) -> Result<String> {
        write_csv(&self.curve_rows(), &["model", "output", "threshold", "lead_time", "csi", "pod", "far", "mcc"])
    }
}

/// Parses rows written by [`EvaluationReport::summary_csv`] or
/// [`EvaluationReport::curves_csv`].
pub fn read_csv<R: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<R>> {
    crate::csvio::read_csv(text)
}
