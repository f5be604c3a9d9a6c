//! Trains a small quantile network on a reduced synthetic archive, writes
//! the checkpoint and the per-epoch log, then resumes for two more epochs.
//!
//!     cargo run --release --example toy_training -- [epochs]

use mqnowcast::data::{Dataset, DatasetManifest};
use mqnowcast::model::{ModelConfig, QuantileSpec};
use mqnowcast::objectives::LossKind;
use mqnowcast::training::{load_checkpoint, resume, save_checkpoint, train_one, TrainConfig};

fn main() -> mqnowcast::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let manifest = DatasetManifest { n_frames: 900, grid_h: 16, grid_w: 16, ..DatasetManifest::default() };
    let data = Dataset::build(&manifest)?;
    let c = data.splits.counts();
    println!("windows train {} val {} test {}", c.train, c.val, c.test);

    let model = ModelConfig { grid_h: 16, grid_w: 16, base_channels: 4, depth: 1, ..ModelConfig::default() };
    let cfg = TrainConfig {
        loss: LossKind::MultiQuantile(QuantileSpec::default()),
        max_epochs: epochs,
        n_runs: 1,
        ..TrainConfig::default()
    };
    let outcome = train_one(&model, &data.splits, &data.stats, &cfg, 0)?;
    print!("{}", outcome.log.to_csv()?);
    println!("best epoch {} val {:.5}", outcome.best.epoch, outcome.best.validation_loss);

    let dir = std::env::temp_dir().join("mqnowcast-toy-training");
    std::fs::create_dir_all(&dir).map_err(|e| mqnowcast::Error::Io { path: dir.clone(), source: e })?;
    save_checkpoint(&outcome.last, dir.join("last.nwqc"))?;
    outcome.log.save(dir.join("log.csv"))?;
    let last = load_checkpoint(dir.join("last.nwqc"))?;
    println!("reloaded checkpoint at epoch {}, adam step {}", last.epoch, last.optimizer.step);

    let more = TrainConfig { max_epochs: epochs + 2, ..cfg };
    let resumed = resume(last, outcome.best, outcome.log, &data.splits, &more)?;
    println!("after resume: {} epochs logged, best val {:.5}", resumed.log.len(), resumed.best.validation_loss);
    Ok(())
}
