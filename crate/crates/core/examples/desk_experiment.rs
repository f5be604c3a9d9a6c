//! Trains MSE, MAE and multi-quantile models on the default synthetic
//! dataset and prints regression scores, coverage and detection scores.
//!
//! cargo run --release --example desk_experiment -- [runs] [max_epochs]

use std::time::Instant;

use mqnowcast::data::{Dataset, DatasetManifest};
use mqnowcast::model::{ModelConfig, QuantileSpec};
use mqnowcast::objectives::LossKind;
use mqnowcast::training::{predict, train_best_of, TrainConfig};
use mqnowcast::verification::{coverage, eval_events, output_heads, stack_targets, EvaluationReport, DEFAULT_THRESHOLDS};

fn main() -> mqnowcast::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let runs = args.first().and_then(|s| s.parse().ok()).unwrap_or(1);
    let max_epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);

    let started = Instant::now();
    let data = Dataset::build(&DatasetManifest::default())?;
    let c = data.splits.counts();
    println!("windows: train {} val {} test {}", c.train, c.val, c.test);

    let model = ModelConfig::default();
    let losses = [LossKind::Mse, LossKind::Mae, LossKind::MultiQuantile(QuantileSpec::default())];
    let targets = stack_targets(&data.splits.test, &data.stats)?;
    let mut report = EvaluationReport::default();
    for loss in losses {
        let cfg = TrainConfig { loss: loss.clone(), n_runs: runs, max_epochs, ..TrainConfig::default() };
        let best = train_best_of(&model, &data.splits, &data.stats, &cfg)?;
        let ckpt = &best.best().best;
        println!(
            "{}: run {} epoch {} val {:.5} ({:.0}s)",
            loss.tag(),
            best.selected,
            ckpt.epoch,
            ckpt.validation_loss,
            started.elapsed().as_secs_f64()
        );
        let out = predict(&ckpt.params, &ckpt.model, &data.splits.test, &data.stats, 32)?;
        let heads = output_heads(&ckpt.model, &out)?;
        if let Some(spec) = loss.quantiles() {
            for ((name, field), q) in heads.iter().zip(spec.levels()) {
                println!("  coverage {name}: {:.3} (target {q})", coverage(field, &targets)?);
            }
        }
        report.heads.extend(eval_events(loss.tag(), &heads, &data.splits.test, &data.stats, data.steps_per_hour, &DEFAULT_THRESHOLDS)?);
    }
    print!("{}", report.summary_csv()?);
    println!("total {:.0}s", started.elapsed().as_secs_f64());
    Ok(())
}
