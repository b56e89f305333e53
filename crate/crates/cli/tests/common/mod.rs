#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clap::Parser;

use condial_cli::commands::{run, Cli};

pub fn cli(args: &[&str]) -> anyhow::Result<()> {
    let mut full = vec!["condial"];
    full.extend_from_slice(args);
    run(Cli::try_parse_from(full)?)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Toy corpus plus a small trained checkpoint under `dir`.
pub fn toy_model(dir: &Path, scenario: u8, seed: u64) -> PathBuf {
    let data = dir.join("data");
    let s = scenario.to_string();
    cli(&["make-corpus", "--toy", "--dialogs", "200", "--scenario", &s, "--rule", "1", "--seed", "3", "--out", p(&data)]).unwrap();
    let ckpt = dir.join("model.ckpt");
    train_into(&data, scenario, seed, &ckpt, &dir.join("metrics.tsv"));
    ckpt
}

pub fn train_into(data: &Path, scenario: u8, seed: u64, ckpt: &Path, log: &Path) {
    let s = scenario.to_string();
    let seed = seed.to_string();
    cli(&[
        "train", "--data", p(data), "--scenario", &s, "--seed", &seed, "--toy", "--epochs", "6",
        "--batch-size", "8", "--lr", "1e-2", "--embed-dim", "8", "--encoder-dim", "12",
        "--status-dim", "6", "--latent-dim", "4", "--label-dim", "4", "--decoder-dim", "12",
        "--val-fraction", "0.1", "--out", p(ckpt), "--log", p(log),
    ])
    .unwrap();
}
