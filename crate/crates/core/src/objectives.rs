//! Training objectives: squared error, absolute error and the weighted
//! multi-quantile pinball loss.
//!
//! Every loss sums over lead times and pixels and divides by the batch size
//! only. Values are accumulated in `f64` whatever the tensor precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::QuantileSpec;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Pinball loss of a single error `e = y - ŷ` at level `q`.
#[inline]
pub fn rho(e: f64, q: f64) -> f64 {
    if e >= 0.0 {
        q * e
    } else {
        (q - 1.0) * e
    }
}

/// Which objective a model is trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    Mse,
    Mae,
    MultiQuantile(QuantileSpec),
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::MultiQuantile(spec) => spec.validate(),
            _ => Ok(()),
        }
    }

    /// Short tag used in file names and reports.
    pub fn tag(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::MultiQuantile(_) => "quantile",
        }
    }

    pub fn quantiles(&self) -> Option<&QuantileSpec> {
        match self {
            LossKind::MultiQuantile(spec) => Some(spec),
            _ => None,
        }
    }

    /// Records the loss of `pred` against `target` on `tape`.
    pub fn record<T: Real>(&self, tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
        match self {
            LossKind::Mse => tape.mse_loss(target, pred),
            LossKind::Mae => tape.mae_loss(target, pred),
            LossKind::MultiQuantile(spec) => multi_quantile_loss(tape, target, pred, spec),
        }
    }

    /// Loss value without gradient tracking.
    pub fn value<T: Real>(&self, target: &Tensor<T>, pred: &Tensor<T>) -> Result<f64> {
        let mut tape = Tape::new();
        let y = tape.leaf(target.clone(), false);
        let p = tape.leaf(pred.clone(), false);
        let loss = self.record(&mut tape, y, p)?;
        Ok(tape.values(loss)[0].as_f64())
    }
}

/// Elementwise pinball loss summed over every element.
pub fn pinball<T: Real>(tape: &mut Tape<T>, target: Var, pred: Var, q: f64) -> Result<Var> {
    tape.pinball(target, pred, q)
}

/// `(1/B) Σ_b Σ_q w_q Σ_ℓ Σ_pixels ρ_q(y - ŷ_q)` with `pred` laid out
/// lead-time-major.
pub fn multi_quantile_loss<T: Real>(tape: &mut Tape<T>, target: Var, pred: Var, spec: &QuantileSpec) -> Result<Var> {
    let (tc, pc) = (tape.shape(target).get(1).copied(), tape.shape(pred).get(1).copied());
    if let (Some(l), Some(c)) = (tc, pc) {
        if c != l * spec.len() {
            return Err(Error::dim(format!(
                "{c} prediction channels do not match {l} lead times x {} quantiles",
                spec.len()
            )));
        }
    }
    tape.multi_quantile_loss(target, pred, spec.levels(), spec.weights())
}

pub fn mse_loss<T: Real>(tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
    tape.mse_loss(target, pred)
}

pub fn mae_loss<T: Real>(tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
    tape.mae_loss(target, pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_is_asymmetric() {
        assert!((rho(2.0, 0.9) - 1.8).abs() < 1e-12);
        assert!((rho(-2.0, 0.9) - 0.2).abs() < 1e-12);
        assert_eq!(rho(0.0, 0.3), 0.0);
    }

    #[test]
    fn loss_kind_round_trips_through_json() {
        for kind in [LossKind::Mse, LossKind::Mae, LossKind::MultiQuantile(QuantileSpec::default())] {
            let text = serde_json::to_string(&kind).unwrap();
            assert_eq!(serde_json::from_str::<LossKind>(&text).unwrap(), kind);
        }
    }
}
