//! The `mqnowcast` command line: `generate`, `train`, `gridsearch`,
//! `evaluate` and `predict`, all driven by one JSON experiment config.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and input errors,
//! 3 when training fails.

mod config;
mod pgm;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::ExperimentConfig;
pub use pgm::{decode_pgm, encode_pgm, to_gray};

use crate::data::{read_archive, to_rate, write_archive, Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::objectives::LossKind;
use crate::training::{grid_search_weights, load_checkpoint, predict, save_checkpoint, train_best_of, Checkpoint};
use crate::verification::{coverage, eval_events, output_heads, stack_targets, EvaluationReport};

#[derive(Debug, Parser)]
#[command(name = "mqnowcast", version, about = "Multi-quantile precipitation nowcasting on synthetic radar data")]
pub struct Cli {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for data generation, initialisation and batch order.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic archive and its manifest under OUT/dataset.
    Generate,
    /// Train a best-of-n model and save its checkpoint under OUT/checkpoints.
    Train(TrainArgs),
    /// Search the shared upper-quantile weight by validation MSE of the median.
    Gridsearch(GridArgs),
    /// Score checkpoints on the test split and write summary and curve CSVs.
    Evaluate(EvalArgs),
    /// Write ground-truth and forecast panels of one test sample as P5 images.
    Predict(PredictArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mse,
    Mae,
    Quantile,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training objective.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Number of independently seeded runs.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Must resolve to the quantile loss.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Comma-separated upper-quantile weights.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Runs per grid point.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Epoch budget per grid point.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to score; repeat for several. Defaults to every checkpoint
    /// in OUT/checkpoints.
    #[arg(long = "checkpoint", value_name = "PATH")]
    pub checkpoints: Vec<PathBuf>,
    /// Comma-separated thresholds in mm/h.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint to draw; repeat for several. Defaults as for `evaluate`.
    #[arg(long = "checkpoint", value_name = "PATH")]
    pub checkpoints: Vec<PathBuf>,
    /// Index into the test split.
    #[arg(long)]
    pub sample: usize,
    /// Rate in mm/h drawn as white.
    #[arg(long)]
    pub max_rate: Option<f64>,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Training { .. } | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn loss_for(arg: Option<LossArg>, cfg: &ExperimentConfig) -> LossKind {
    match arg {
        None => cfg.train.loss.clone(),
        Some(LossArg::Mse) => LossKind::Mse,
        Some(LossArg::Mae) => LossKind::Mae,
        Some(LossArg::Quantile) => LossKind::MultiQuantile(cfg.quantiles.clone()),
    }
}

/// Config after applying the global flags.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = effective_config(cli)?;
    let name = match &cli.command {
        Command::Generate => "generate",
        Command::Train(a) => {
            cfg.train.loss = loss_for(a.loss, &cfg);
            cfg.train.n_runs = a.runs.unwrap_or(cfg.train.n_runs);
            cfg.train.max_epochs = a.max_epochs.unwrap_or(cfg.train.max_epochs);
            "train"
        }
        Command::Gridsearch(a) => {
            cfg.train.loss = loss_for(a.loss, &cfg);
            if let Some(w) = &a.weights {
                cfg.grid = w.clone();
            }
            cfg.grid_runs = a.runs.or(cfg.grid_runs);
            cfg.grid_max_epochs = a.max_epochs.or(cfg.grid_max_epochs);
            "gridsearch"
        }
        Command::Evaluate(a) => {
            if let Some(t) = &a.thresholds {
                cfg.thresholds = t.clone();
            }
            "evaluate"
        }
        Command::Predict(a) => {
            cfg.panel_max_rate = a.max_rate.unwrap_or(cfg.panel_max_rate);
            "predict"
        }
    };
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    write(&out.join(format!("{name}.config.json")), cfg.to_json()?.as_bytes())?;

    match &cli.command {
        Command::Generate => generate(&cfg),
        Command::Train(_) => train(&cfg),
        Command::Gridsearch(_) => gridsearch(&cfg),
        Command::Evaluate(a) => evaluate(&cfg, &a.checkpoints),
        Command::Predict(a) => panels(&cfg, &a.checkpoints, a.sample),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn dataset_dir(out: &Path) -> PathBuf {
    out.join("dataset")
}

pub fn checkpoint_path(out: &Path, loss: &LossKind) -> PathBuf {
    out.join("checkpoints").join(format!("{}.nwqc", loss.tag()))
}

fn generate(cfg: &ExperimentConfig) -> Result<()> {
    let dir = dataset_dir(&cfg.output_dir);
    create_dir(&dir)?;
    let manifest = DatasetManifest { source: None, counts: None, ..cfg.dataset.clone() };
    let archive = manifest.archive()?;
    let data = Dataset::from_archive(&manifest, &archive)?;
    write_archive(&archive, dir.join("archive.nwq1"))?;
    data.manifest.save(dir.join("manifest.json"))?;
    let c = data.splits.counts();
    println!("archive: {} frames of {}x{}", archive.n_frames(), archive.height(), archive.width());
    println!("windows: train {} val {} test {}", c.train, c.val, c.test);
    println!("wrote {}", dir.display());
    Ok(())
}

/// Dataset stored by `generate`, re-windowed from its archive.
pub fn load_dataset(out: &Path) -> Result<Dataset> {
    let dir = dataset_dir(out);
    let manifest = DatasetManifest::load(dir.join("manifest.json"))?;
    let archive = read_archive(dir.join("archive.nwq1"))?;
    Dataset::from_archive(&DatasetManifest { source: None, ..manifest }, &archive)
}

fn model_for(cfg: &ExperimentConfig, data: &Dataset) -> crate::model::ModelConfig {
    let m = &data.manifest;
    crate::model::ModelConfig {
        input_frames: m.input_frames,
        lead_times: m.lead_times,
        grid_h: m.grid_h,
        grid_w: m.grid_w,
        ..cfg.model.clone()
    }
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let data = load_dataset(&cfg.output_dir)?;
    let model = model_for(cfg, &data);
    let tag = cfg.train.loss.tag();
    let logs = cfg.output_dir.join("logs");
    create_dir(&logs)?;
    create_dir(&cfg.output_dir.join("checkpoints"))?;

    let result = train_best_of(&model, &data.splits, &data.stats, &cfg.train);
    // Each run's log is written even when it failed.
    let runs = match &result {
        Ok(best) => best.runs.iter().map(|r| r.as_ref().map(|o| Some(&o.log)).unwrap_or_else(run_error_log)).collect(),
        Err(_) => Vec::new(),
    };
    for (i, log) in runs.iter().enumerate() {
        if let Some(log) = log {
            log.save(logs.join(format!("{tag}_run{i}.csv")))?;
        }
    }
    let best = result?;
    for (i, r) in best.runs.iter().enumerate() {
        if let Err(e) = r {
            eprintln!("run {i} failed: {e}");
        }
    }
    let ckpt = &best.best().best;
    let path = checkpoint_path(&cfg.output_dir, &cfg.train.loss);
    save_checkpoint(ckpt, &path)?;
    println!(
        "selected run {} of {}: epoch {}, validation loss {:.6}",
        best.selected,
        best.runs.len(),
        ckpt.epoch,
        ckpt.validation_loss
    );
    println!("checkpoint {}", path.display());
    Ok(())
}

fn run_error_log(e: &Error) -> Option<&crate::training::RunLog> {
    match e {
        Error::Training { log: Some(log), .. } => Some(log),
        _ => None,
    }
}

fn gridsearch(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.train.loss.quantiles().is_none() {
        return Err(Error::config("gridsearch needs the quantile loss (--loss quantile)"));
    }
    let data = load_dataset(&cfg.output_dir)?;
    let model = model_for(cfg, &data);
    let mut train = cfg.train.clone();
    train.n_runs = cfg.grid_runs.unwrap_or(train.n_runs);
    train.max_epochs = cfg.grid_max_epochs.unwrap_or(train.max_epochs);
    let gs = grid_search_weights(&cfg.grid, &model, &data.splits, &data.stats, &train)?;
    let path = cfg.output_dir.join("gridsearch.csv");
    write(&path, gs.to_csv()?.as_bytes())?;
    for r in &gs.rows {
        println!("weight {:<6} validation MSE of median {:.6e}", r.weight, r.val_mse_median);
    }
    println!("best weight {}", gs.best_weight);
    println!("wrote {}", path.display());
    Ok(())
}

/// Explicit checkpoints, or every `*.nwqc` under OUT/checkpoints in
/// mse, mae, quantile order.
fn resolve_checkpoints(out: &Path, given: &[PathBuf]) -> Result<Vec<(String, Checkpoint)>> {
    let paths: Vec<PathBuf> = if given.is_empty() {
        ["mse", "mae", "quantile"]
            .iter()
            .map(|t| out.join("checkpoints").join(format!("{t}.nwqc")))
            .filter(|p| p.exists())
            .collect()
    } else {
        given.to_vec()
    };
    if paths.is_empty() {
        return Err(Error::config(format!("no checkpoints found in {}", out.join("checkpoints").display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
            Ok((name, load_checkpoint(p)?))
        })
        .collect()
}

fn check_compatible(name: &str, ckpt: &Checkpoint, data: &Dataset) -> Result<()> {
    let (m, d) = (&ckpt.model, &data.manifest);
    if (m.input_frames, m.lead_times, m.grid_h, m.grid_w) != (d.input_frames, d.lead_times, d.grid_h, d.grid_w) {
        return Err(Error::config(format!(
            "{name}: model expects {}x{}x{} -> {} frames, dataset has {}x{}x{} -> {}",
            m.input_frames, m.grid_h, m.grid_w, m.lead_times, d.input_frames, d.grid_h, d.grid_w, d.lead_times
        )));
    }
    if ckpt.stats.train_max.to_bits() != data.stats.train_max.to_bits() {
        return Err(Error::config(format!("{name}: checkpoint was normalised with a different training maximum")));
    }
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig, given: &[PathBuf]) -> Result<()> {
    let data = load_dataset(&cfg.output_dir)?;
    let ckpts = resolve_checkpoints(&cfg.output_dir, given)?;
    let test = &data.splits.test;
    let targets = stack_targets(test, &data.stats)?;
    let mut report = EvaluationReport::default();
    let mut cov = String::from("model,output,level,coverage\n");
    for (name, ckpt) in &ckpts {
        check_compatible(name, ckpt, &data)?;
        let out = predict(&ckpt.params, &ckpt.model, test, &data.stats, cfg.train.batch_size)?;
        let heads = output_heads(&ckpt.model, &out)?;
        if let Some(spec) = &ckpt.model.quantiles {
            for ((output, field), q) in heads.iter().zip(spec.levels()) {
                cov.push_str(&format!("{name},{output},{q},{}\n", coverage(field, &targets)?));
            }
        }
        report.heads.extend(eval_events(name, &heads, test, &data.stats, data.steps_per_hour, &cfg.thresholds)?);
    }
    let out = &cfg.output_dir;
    let summary = report.summary_csv()?;
    write(&out.join("summary.csv"), summary.as_bytes())?;
    write(&out.join("curves.csv"), report.curves_csv()?.as_bytes())?;
    write(&out.join("coverage.csv"), cov.as_bytes())?;
    print!("{summary}");
    println!("wrote {}, {} and {}", out.join("summary.csv").display(), out.join("curves.csv").display(), out.join("coverage.csv").display());
    Ok(())
}

fn panels(cfg: &ExperimentConfig, given: &[PathBuf], sample: usize) -> Result<()> {
    let data = load_dataset(&cfg.output_dir)?;
    let test = &data.splits.test;
    let seq = test
        .get(sample)
        .ok_or_else(|| Error::config(format!("sample {sample} outside the test split of {}", test.len())))?;
    let ckpts = resolve_checkpoints(&cfg.output_dir, given)?;
    let dir = cfg.output_dir.join("panels").join(format!("sample_{sample}"));
    create_dir(&dir)?;
    let (lead, h, w) = (seq.lead_times(), data.manifest.grid_h, data.manifest.grid_w);
    let p = h * w;
    let sph = data.steps_per_hour;
    let max = cfg.panel_max_rate;
    let mut count = 0;

    for l in 0..lead {
        let rates: Vec<f64> = seq.targets.values()[l * p..(l + 1) * p].iter().map(|&v| to_rate(v as f64, sph)).collect();
        write(&dir.join(format!("truth_lead{}.pgm", l + 1)), &encode_pgm(w, h, &to_gray(&rates, max)))?;
        count += 1;
    }
    for (name, ckpt) in &ckpts {
        check_compatible(name, ckpt, &data)?;
        let out = predict(&ckpt.params, &ckpt.model, std::slice::from_ref(seq), &data.stats, 1)?;
        for (output, field) in output_heads(&ckpt.model, &out)? {
            for l in 0..lead {
                let rates: Vec<f64> = field.values()[l * p..(l + 1) * p]
                    .iter()
                    .map(|&v| to_rate(data.stats.denormalize(v) as f64, sph))
                    .collect();
                let file = dir.join(format!("{name}_{output}_lead{}.pgm", l + 1));
                write(&file, &encode_pgm(w, h, &to_gray(&rates, max)))?;
                count += 1;
            }
        }
    }
    let sidecar = format!(
        "units mm/h\nmax_rate {max}\nbyte round(255 * min(rate / max_rate, 1))\nsample {sample}\ntimestamp_index {}\nsteps_per_hour {sph}\n",
        seq.timestamp_index
    );
    write(&dir.join("scale.txt"), sidecar.as_bytes())?;
    println!("wrote {count} panels to {}", dir.display());
    Ok(())
}
