//! Shared helpers for CLI integration tests.

use std::path::Path;
use std::process::{Command, Output};

pub fn pipeline_bin() -> &'static str {
    env!("CARGO_BIN_EXE_pipeline")
}

pub fn run_subcommand(sub: &str, config: &Path, out: &Path) -> Output {
    Command::new(pipeline_bin())
        .args([sub, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("failed to spawn pipeline binary")
}

pub fn run_subcommand_ok(sub: &str, config: &Path, out: &Path) {
    let output = run_subcommand(sub, config, out);
    assert!(
        output.status.success(),
        "`pipeline {sub}` failed with {:?}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Runs the full six-stage pipeline into `out`.
pub fn run_full_pipeline(config: &Path, out: &Path) {
    for sub in ["synth", "preprocess", "train-rf", "predict-rf", "train-cnn", "evaluate"] {
        run_subcommand_ok(sub, config, out);
    }
}

/// Small, fast pipeline config used by the CLI tests: 3 scenes of
/// 128x128x12 with one injected noisy channel.
pub fn tiny_config_json() -> &'static str {
    r#"{
        "synth": {
            "scenes": 3,
            "rows": 128,
            "cols": 128,
            "channels": 12,
            "noisy_channel_indices": [5],
            "seed": 4242
        },
        "preprocess": {
            "max_components": 6
        },
        "rf": {
            "n_trees": 5
        },
        "cnn": {
            "epochs": 2,
            "batch_size": 4
        }
    }"#
}
