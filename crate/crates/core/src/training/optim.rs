use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Parameters;

/// First and second moment estimates, one buffer per parameter tensor in
/// parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamState {
    pub fn new(params: &Parameters<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts before any
/// parameter changes.
pub fn adam_step(params: &mut Parameters<f32>, grads: &[Vec<f32>], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::contract(format!(
            "adam: {} gradients and {} moment buffers for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for ((name, t), g) in params.iter().zip(grads) {
        if g.len() != t.len() {
            return Err(Error::dim(format!("adam: gradient of {name} has {} values, expected {}", g.len(), t.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training { message: format!("non-finite gradient in {name}"), log: None });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = (1.0 - cfg.beta1.powi(t)) as f32;
    let c2 = (1.0 - cfg.beta2.powi(t)) as f32;
    let (lr, eps) = (lr as f32, cfg.epsilon as f32);
    for (k, (_, tensor)) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (((p, &g), mi), vi) in tensor.values_mut().iter_mut().zip(&grads[k]).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Counts epochs since the last strict improvement of a monitored loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stagnation {
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl Stagnation {
    /// Records one epoch's loss and reports whether it improved.
    pub fn observe(&mut self, loss: f64) -> bool {
        match self.best {
            Some(b) if loss >= b || loss.is_nan() => {
                self.bad_epochs += 1;
                false
            }
            _ => {
                self.best = Some(loss);
                self.bad_epochs = 0;
                true
            }
        }
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without a strict improvement, then starts counting again.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub state: Stagnation,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self { factor, patience, state: Stagnation::default() }
    }

    pub fn step(&mut self, val_loss: f64, lr: f64) -> f64 {
        self.state.observe(val_loss);
        if self.state.bad_epochs >= self.patience {
            self.state.bad_epochs = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}

/// Learning rate after replaying `history` through a fresh scheduler.
pub fn plateau_scheduler(history: &[f64], lr: f64, factor: f64, patience: usize) -> f64 {
    let mut s = PlateauScheduler::new(factor, patience);
    history.iter().fold(lr, |lr, &loss| s.step(loss, lr))
}

/// Signals a stop once `patience` epochs pass without improvement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub state: Stagnation,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, state: Stagnation::default() }
    }

    /// Records the epoch's loss; true means stop now.
    pub fn step(&mut self, val_loss: f64) -> bool {
        self.state.observe(val_loss);
        self.state.bad_epochs >= self.patience
    }
}
