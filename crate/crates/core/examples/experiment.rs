// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run the full evaluation on one default synthetic corpus and print a summary.
//!
//! `cargo run --release -p hpr-core --example experiment -- [seed]`

use hpr_core::data::SynthConfig;
use hpr_core::pipeline::{run_experiment, ExperimentConfig};

fn main() -> hpr_core::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let start = std::time::Instant::now();
    let corpus = SynthConfig {
        seed,
        ..SynthConfig::default()
    }
    .generate::<f32>()?;
    let config = ExperimentConfig {
        seed,
        alphas: vec![15.0, 200.0],
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&corpus, &config)?;
    println!(
        "split {:?}  selected {:?}",
        report.split_sizes, report.selected
    );
    println!("best test accuracy {:?}", report.best_test_accuracy());
    println!(
        "judge accuracy {:?}",
        report.judge_accuracy.values().collect::<Vec<_>>()
    );
    for m in &report.methods {
        println!(
            "{:<22} flip {:.4}  pos changed {}/{}  rel norm {:.2e}  {}",
            m.method,
            m.negative_flip_rate,
            m.positives_changed,
            m.positives,
            m.mean_relative_norm_change,
            m.shift
        );
    }
    println!(
        "probe-positive changed {}/{}  ({:.1?})",
        report.hpr_probe_positive_changed,
        report.hpr_probe_positive_total,
        start.elapsed()
    );
    Ok(())
}
