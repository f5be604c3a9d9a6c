use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    adam_step, AdamState, Checkpoint, EarlyStopping, EpochRecord, PlateauScheduler, Progress, RunLog, Stagnation,
    TrainConfig,
};
use crate::data::{stack_batch, NormalizationStats, RadarSequence, Splits};
use crate::error::{Error, Result};
use crate::model::{forward, forward_on_tape, init_parameters, ModelConfig, Parameters};
use crate::objectives::LossKind;
use crate::tensor::{Tape, Tensor};

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Lowest validation loss seen.
    pub best: Checkpoint,
    /// State after the final epoch, for resuming.
    pub last: Checkpoint,
    pub log: RunLog,
    pub stopped_early: bool,
}

/// Seed of run `run_index`.
pub fn run_seed(cfg: &TrainConfig, run_index: usize) -> u64 {
    cfg.seed.wrapping_add(run_index as u64)
}

/// Training sample order for one epoch. Depends only on the run seed and the
/// epoch, so a resumed run sees the same batches.
pub fn batch_order(n: usize, run_seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Network settings a run actually uses: the head follows the loss and the
/// initialisation follows the run seed.
pub fn run_model_config(model: &ModelConfig, loss: &LossKind, seed: u64) -> ModelConfig {
    ModelConfig { seed, ..model.clone().with_quantiles(loss.quantiles().cloned()) }
}

fn check_shapes(model: &ModelConfig, seqs: &[RadarSequence]) -> Result<()> {
    let Some(s) = seqs.first() else {
        return Err(Error::contract("empty split"));
    };
    let expected_in = [model.input_frames, model.grid_h, model.grid_w];
    let expected_out = [model.lead_times, model.grid_h, model.grid_w];
    if s.inputs.shape() != expected_in || s.targets.shape() != expected_out {
        return Err(Error::dim(format!(
            "data windows {:?} -> {:?} do not match model {:?} -> {:?}",
            s.inputs.shape(),
            s.targets.shape(),
            expected_in,
            expected_out
        )));
    }
    Ok(())
}

/// One pass over `order` in batches of `cfg.batch_size`, the last batch
/// possibly short. Returns each batch's loss.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    params: &mut Parameters<f32>,
    adam: &mut AdamState,
    model: &ModelConfig,
    train: &[RadarSequence],
    stats: &NormalizationStats,
    cfg: &TrainConfig,
    lr: f64,
    order: &[usize],
) -> Result<Vec<f64>> {
    let adam_cfg = cfg.adam();
    let mut losses = Vec::with_capacity(order.len().div_ceil(cfg.batch_size));
    for batch in order.chunks(cfg.batch_size) {
        let (x, y) = stack_batch(train, batch, Some(stats))?;
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let xv = tape.leaf(x, false);
        let yv = tape.leaf(y, false);
        let pred = forward_on_tape(&mut tape, &vars, model, xv)?;
        let loss = cfg.loss.record(&mut tape, yv, pred)?;
        let value = tape.values(loss)[0] as f64;
        if !value.is_finite() {
            return Err(Error::Training { message: format!("training loss is {value}"), log: None });
        }
        tape.backward(loss)?;
        let grads = params.gradients(&tape, &vars);
        adam_step(params, &grads, adam, lr, &adam_cfg)?;
        losses.push(value);
    }
    Ok(losses)
}

/// Normalised forecasts for every sequence, stacked to `[N, C, H, W]`.
pub fn predict(
    params: &Parameters<f32>,
    model: &ModelConfig,
    seqs: &[RadarSequence],
    stats: &NormalizationStats,
    batch_size: usize,
) -> Result<Tensor<f32>> {
    check_shapes(model, seqs)?;
    let idx: Vec<usize> = (0..seqs.len()).collect();
    let mut values = Vec::new();
    for batch in idx.chunks(batch_size.max(1)) {
        let (x, _) = stack_batch(seqs, batch, Some(stats))?;
        values.extend(forward(params, model, &x)?.into_values());
    }
    Tensor::from_vec(vec![seqs.len(), model.output_channels(), model.grid_h, model.grid_w], values)
}

/// Mean per-sample loss over a split, evaluated in batches.
pub fn split_loss(
    params: &Parameters<f32>,
    model: &ModelConfig,
    seqs: &[RadarSequence],
    stats: &NormalizationStats,
    loss: &LossKind,
    batch_size: usize,
) -> Result<f64> {
    check_shapes(model, seqs)?;
    let idx: Vec<usize> = (0..seqs.len()).collect();
    let mut total = 0.0;
    for batch in idx.chunks(batch_size.max(1)) {
        let (x, y) = stack_batch(seqs, batch, Some(stats))?;
        let pred = forward(params, model, &x)?;
        total += loss.value(&y, &pred)? * batch.len() as f64;
    }
    Ok(total / seqs.len() as f64)
}

fn with_log(e: Error, log: &RunLog) -> Error {
    match e {
        Error::Training { message, .. } => Error::Training { message, log: Some(Box::new(log.clone())) },
        Error::NonFinite { op } => {
            Error::Training { message: format!("non-finite value produced by {op}"), log: Some(Box::new(log.clone())) }
        }
        other => other,
    }
}

/// Trains run `run_index` from a fresh initialisation and returns its best
/// checkpoint by validation loss.
pub fn train_one(
    model: &ModelConfig,
    splits: &Splits,
    stats: &NormalizationStats,
    cfg: &TrainConfig,
    run_index: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let seed = run_seed(cfg, run_index);
    let model = run_model_config(model, &cfg.loss, seed);
    model.validate()?;
    let params = init_parameters(&model)?;
    let start = Checkpoint {
        optimizer: AdamState::new(&params),
        params,
        model,
        stats: *stats,
        loss: cfg.loss.clone(),
        epoch: 0,
        validation_loss: f64::INFINITY,
        run_index,
        run_seed: seed,
        progress: Progress { lr: cfg.learning_rate, scheduler: Stagnation::default(), early_stop: Stagnation::default() },
    };
    run_epochs(start, 0, None, RunLog::default(), splits, cfg)
}

/// Continues a run from its last checkpoint until `cfg.max_epochs` epochs
/// have been trained in total or early stopping triggers.
pub fn resume(last: Checkpoint, best: Checkpoint, log: RunLog, splits: &Splits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if last.loss != cfg.loss || best.run_seed != last.run_seed {
        return Err(Error::config("checkpoints do not belong to this run configuration"));
    }
    let next = last.epoch + 1;
    run_epochs(last, next, Some(best), log, splits, cfg)
}

fn run_epochs(
    mut state: Checkpoint,
    first_epoch: usize,
    mut best: Option<Checkpoint>,
    mut log: RunLog,
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let model = state.model.clone();
    check_shapes(&model, &splits.train)?;
    check_shapes(&model, &splits.val)?;
    let stats = state.stats;
    let mut scheduler = PlateauScheduler { factor: cfg.plateau_factor, patience: cfg.plateau_patience, state: state.progress.scheduler };
    let mut early = EarlyStopping { patience: cfg.early_stop_patience, state: state.progress.early_stop };
    let mut stopped_early = early.state.bad_epochs >= early.patience && first_epoch > 0;

    let mut epoch = first_epoch;
    while epoch < cfg.max_epochs && !stopped_early {
        let started = Instant::now();
        let lr = state.progress.lr;
        let order = batch_order(splits.train.len(), state.run_seed, epoch);
        let losses = train_epoch(&mut state.params, &mut state.optimizer, &model, &splits.train, &stats, cfg, lr, &order)
            .map_err(|e| with_log(e, &log))?;
        let train_loss = order
            .chunks(cfg.batch_size)
            .zip(&losses)
            .map(|(b, l)| l * b.len() as f64)
            .sum::<f64>()
            / order.len() as f64;
        let val_loss = split_loss(&state.params, &model, &splits.val, &stats, &cfg.loss, cfg.batch_size)
            .map_err(|e| with_log(e, &log))?;
        log.push(EpochRecord { epoch, train_loss, val_loss, lr, seconds: started.elapsed().as_secs_f64() });
        if !val_loss.is_finite() {
            return Err(Error::Training {
                message: format!("validation loss diverged to {val_loss} at epoch {epoch}"),
                log: Some(Box::new(log)),
            });
        }

        state.progress.lr = scheduler.step(val_loss, lr);
        stopped_early = early.step(val_loss);
        state.progress.scheduler = scheduler.state;
        state.progress.early_stop = early.state;
        state.epoch = epoch;
        state.validation_loss = val_loss;
        if best.as_ref().is_none_or(|b| val_loss < b.validation_loss) {
            best = Some(state.clone());
        }
        epoch += 1;
    }
    let best = best.ok_or_else(|| Error::config("no epoch was trained"))?;
    Ok(TrainOutcome { best, last: state, log, stopped_early })
}

/// Index of the lowest loss, ties to the lower index. `None` entries are
/// failed runs.
pub fn select_best(losses: &[Option<f64>]) -> Option<usize> {
    losses
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.filter(|v| !v.is_nan()).map(|v| (i, v)))
        .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
            Some((_, best)) if best <= v => acc,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Every run of a best-of-n training, with the winner's index.
#[derive(Debug)]
pub struct BestOf {
    pub selected: usize,
    pub runs: Vec<Result<TrainOutcome>>,
}

impl BestOf {
    pub fn best(&self) -> &TrainOutcome {
        self.runs[self.selected].as_ref().expect("selected run succeeded")
    }
}

/// Trains `cfg.n_runs` runs with seeds `seed, seed + 1, …` and keeps the one
/// with the lowest best validation loss.
pub fn train_best_of(model: &ModelConfig, splits: &Splits, stats: &NormalizationStats, cfg: &TrainConfig) -> Result<BestOf> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.n_runs);
    for i in 0..cfg.n_runs {
        match train_one(model, splits, stats, cfg, i) {
            Err(e) if !matches!(e, Error::Training { .. }) => return Err(e),
            r => runs.push(r),
        }
    }
    let losses: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().ok().map(|o| o.best.validation_loss)).collect();
    let selected =
        select_best(&losses).ok_or_else(|| Error::Training { message: format!("all {} runs diverged", runs.len()), log: None })?;
    Ok(BestOf { selected, runs })
}
