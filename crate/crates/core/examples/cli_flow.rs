//! Drives the command-line workflow in-process on a small configuration:
//! generate, train each loss, evaluate, and render forecast panels.
//!
//!     cargo run --release --example cli_flow -- [output_dir]

use mqnowcast::cli::{run, ExperimentConfig};
use mqnowcast::data::DatasetManifest;
use mqnowcast::model::ModelConfig;

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("mqnowcast-cli-flow").display().to_string());
    std::fs::create_dir_all(&out).expect("output dir");
    let mut cfg = ExperimentConfig {
        dataset: DatasetManifest { n_frames: 600, grid_h: 16, grid_w: 16, ..DatasetManifest::default() },
        model: ModelConfig { grid_h: 16, grid_w: 16, base_channels: 4, depth: 1, ..ModelConfig::default() },
        ..ExperimentConfig::default()
    };
    cfg.train.n_runs = 1;
    cfg.train.max_epochs = 3;
    let config = format!("{out}/config.json");
    std::fs::write(&config, cfg.to_json().expect("json")).expect("write config");

    let steps: [&[&str]; 6] = [
        &["generate"],
        &["train", "--loss", "mse"],
        &["train", "--loss", "mae"],
        &["train", "--loss", "quantile"],
        &["evaluate"],
        &["predict", "--sample", "0"],
    ];
    for step in steps {
        println!("$ mqnowcast {}", step.join(" "));
        let mut args = vec!["mqnowcast", "--config", &config, "--out", &out];
        args.extend_from_slice(step);
        let code = run(args);
        if code != 0 {
            eprintln!("exit {code}");
            std::process::exit(code);
        }
    }
}
