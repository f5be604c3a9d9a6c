//! Adam, plateau learning-rate scheduling, early stopping, best-of-n runs,
//! the upper-quantile weight grid search, and NWQC checkpoints.

mod checkpoint;
mod config;
mod gridsearch;
mod optim;
mod runlog;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Progress, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{TrainConfig, MAX_EPOCHS_CAP};
pub use gridsearch::{argmin_weight, grid_search_weights, grid_spec, GridRow, GridSearch};
pub use optim::{adam_step, plateau_scheduler, AdamConfig, AdamState, EarlyStopping, PlateauScheduler, Stagnation};
pub use runlog::{EpochRecord, RunLog};
pub use trainer::{
    batch_order, predict, resume, run_model_config, run_seed, select_best, split_loss, train_best_of, train_epoch,
    train_one, BestOf, TrainOutcome,
};
