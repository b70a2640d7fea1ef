// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hpr(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpr"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HPR_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = hpr(cwd, args);
    assert!(
        out.status.success(),
        "hpr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &[&str] = &[
    "--d",
    "64",
    "--num-layers",
    "3",
    "--samples",
    "200",
    "--tokens",
    "3",
];

fn small_corpus(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["gen", "--out", name];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(dir, &args);
    dir.join(name).join("corpus.hpra")
}

#[test]
fn gen_defaults_and_reproducible_digest() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen", "--out", "default"]);
    let m = json(tmp.path().join("default/manifest.json"));
    assert_eq!(m["d"], 256);
    assert_eq!(m["num_layers"], 12);
    assert_eq!(m["samples"], 500);
    assert_eq!(m["records"], 500 * 8 * 12);
    assert_eq!(m["float_bits"], 32);

    small_corpus(tmp.path(), "a", &["--seed", "9"]);
    small_corpus(tmp.path(), "b", &["--seed", "9"]);
    small_corpus(tmp.path(), "c", &["--seed", "10"]);
    let digest = |n: &str| json(tmp.path().join(n).join("manifest.json"))["crc32"].clone();
    assert_eq!(digest("a"), digest("b"));
    assert_ne!(digest("a"), digest("c"));
    assert_eq!(
        fs::read(tmp.path().join("a/corpus.hpra")).unwrap(),
        fs::read(tmp.path().join("b/corpus.hpra")).unwrap()
    );
}

#[test]
fn gen_rejects_bad_jitter_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hpr(tmp.path(), &["gen", "--out", "x", "--jitter", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("radius_jitter"));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn config_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "seed = 3\nprecision = \"f64\"\n[data]\nd = 16\nnum_layers = 2\nn_samples = 10\n",
    )
    .unwrap();
    ok(
        tmp.path(),
        &[
            "gen", "--config", "run.toml", "--seed", "5", "--d", "12", "--out", "o",
        ],
    );
    let echoed: toml::Value =
        toml::from_str(&fs::read_to_string(tmp.path().join("o/config.toml")).unwrap()).unwrap();
    assert_eq!(echoed["seed"].as_integer(), Some(5));
    assert_eq!(echoed["data"]["d"].as_integer(), Some(12));
    assert_eq!(echoed["data"]["num_layers"].as_integer(), Some(2));
    assert_eq!(echoed["data"]["radius_mean"].as_float(), Some(100.0));
    let m = json(tmp.path().join("o/manifest.json"));
    assert_eq!(
        (m["d"].as_u64(), m["float_bits"].as_u64()),
        (Some(12), Some(64))
    );

    // the echoed file reproduces the run on its own
    fs::copy(
        tmp.path().join("o/config.toml"),
        tmp.path().join("echo.toml"),
    )
    .unwrap();
    ok(tmp.path(), &["gen", "--config", "echo.toml", "--out", "p"]);
    assert_eq!(
        fs::read(tmp.path().join("o/corpus.hpra")).unwrap(),
        fs::read(tmp.path().join("p/corpus.hpra")).unwrap()
    );

    fs::write(tmp.path().join("bad.toml"), "sede = 1\n").unwrap();
    assert!(
        !hpr(tmp.path(), &["gen", "--config", "bad.toml", "--out", "q"])
            .status
            .success()
    );
}

#[test]
fn outputs_must_be_fresh_and_env_sets_root() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path(), "g", &[]);
    let again = hpr(tmp.path(), &["gen", "--out", "g", "--d", "8"]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("already exists"));

    let mut args = vec!["gen"];
    args.extend_from_slice(SMALL);
    let run = Command::new(env!("CARGO_BIN_EXE_hpr"))
        .args(&args)
        .current_dir(tmp.path())
        .env("HPR_OUTPUT_ROOT", "runs")
        .output()
        .unwrap();
    assert!(run.status.success());
    let made: Vec<_> = fs::read_dir(tmp.path().join("runs")).unwrap().collect();
    assert_eq!(made.len(), 1);
    let second = Command::new(env!("CARGO_BIN_EXE_hpr"))
        .args(&args)
        .current_dir(tmp.path())
        .env("HPR_OUTPUT_ROOT", "runs")
        .output()
        .unwrap();
    assert!(
        !second.status.success(),
        "same settings map to the same directory"
    );
}

#[test]
fn train_edit_eval_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let corpus = small_corpus(dir, "g", &[]);
    let original = fs::read(&corpus).unwrap();
    let stdout = ok(
        dir,
        &[
            "train",
            "--corpus",
            "g/corpus.hpra",
            "-k",
            "2",
            "--epochs",
            "8",
            "--lr",
            "2e-3",
            "--out",
            "t",
        ],
    );
    assert!(stdout.contains("selected layers"));
    for f in [
        "hpr.hprb",
        "steering.hprb",
        "diff.hprb",
        "judge.hpra",
        "eval.hpra",
        "training.json",
        "config.toml",
    ] {
        assert!(dir.join("t").join(f).exists(), "{f}");
    }
    let log = json(dir.join("t/training.json"));
    assert_eq!(log["selected"].as_array().unwrap().len(), 2);
    assert_eq!(log["logs"]["0"]["epochs"].as_array().unwrap().len(), 8);

    ok(
        dir,
        &[
            "edit",
            "--corpus",
            "t/eval.hpra",
            "--bundle",
            "t/hpr.hprb",
            "--out",
            "full",
        ],
    );
    let trace = json(dir.join("full/trace.json"));
    assert!(trace["edited"].as_u64().unwrap() > 0);
    assert_eq!(trace["fallbacks"].as_u64(), Some(0));

    ok(
        dir,
        &[
            "edit",
            "--corpus",
            "t/eval.hpra",
            "--bundle",
            "t/hpr.hprb",
            "--mode",
            "off",
            "--out",
            "off",
        ],
    );
    assert_eq!(
        fs::read(dir.join("off/edited.hpra")).unwrap(),
        fs::read(dir.join("t/eval.hpra")).unwrap()
    );
    ok(
        dir,
        &[
            "edit",
            "--corpus",
            "t/eval.hpra",
            "--bundle",
            "t/steering.hprb",
            "--mode",
            "steer",
            "--alpha",
            "0",
            "--out",
            "s0",
        ],
    );
    assert_eq!(
        fs::read(dir.join("s0/edited.hpra")).unwrap(),
        fs::read(dir.join("t/eval.hpra")).unwrap()
    );
    ok(
        dir,
        &[
            "edit",
            "--corpus",
            "t/eval.hpra",
            "--bundle",
            "t/diff.hprb",
            "--mode",
            "diff",
            "--out",
            "diff",
        ],
    );

    let wrong = hpr(
        dir,
        &[
            "edit",
            "--corpus",
            "t/eval.hpra",
            "--bundle",
            "t/hpr.hprb",
            "--mode",
            "steer",
            "--out",
            "w",
        ],
    );
    assert!(!wrong.status.success());

    let judged = ["--judges", "t/judge.hpra", "--epochs", "8", "--lr", "2e-3"];
    let mut args = vec![
        "eval",
        "--original",
        "t/eval.hpra",
        "--edited",
        "t/eval.hpra",
        "--out",
        "same",
    ];
    args.extend_from_slice(&judged);
    ok(dir, &args);
    let same = json(dir.join("same/report.json"));
    assert_eq!(same["shift"]["false_to_true"], 0);
    assert_eq!(same["shift"]["true_to_false"], 0);
    assert_eq!(same["positives_changed"], 0);

    let mut args = vec![
        "eval",
        "--original",
        "t/eval.hpra",
        "--edited",
        "full/edited.hpra",
        "--bundle",
        "t/hpr.hprb",
        "--out",
        "scored",
    ];
    args.extend_from_slice(&judged);
    let text = ok(dir, &args);
    assert!(text.contains("F->T"));
    let scored = json(dir.join("scored/report.json"));
    assert!(scored["negative_flip_rate"].as_f64().unwrap() > 0.5);
    assert!(scored["max_relative_norm_change"].as_f64().unwrap() < 1e-4);

    let mut args = vec![
        "eval",
        "--original",
        "t/eval.hpra",
        "--edited",
        "t/judge.hpra",
        "--out",
        "mismatch",
    ];
    args.extend_from_slice(&judged);
    assert!(!hpr(dir, &args).status.success());

    assert_eq!(
        fs::read(&corpus).unwrap(),
        original,
        "inputs are never rewritten"
    );
}

#[test]
fn train_errors_and_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path(), "g", &[]);
    let big_k = hpr(
        tmp.path(),
        &[
            "train",
            "--corpus",
            "g/corpus.hpra",
            "-k",
            "4",
            "--out",
            "t",
        ],
    );
    assert!(!big_k.status.success());
    assert!(String::from_utf8_lossy(&big_k.stderr).contains("exceeds"));
    assert!(!tmp.path().join("t").exists());

    let zero = hpr(
        tmp.path(),
        &[
            "train",
            "--corpus",
            "g/corpus.hpra",
            "-k",
            "1",
            "--epochs",
            "0",
            "--no-baselines",
            "--out",
            "z",
        ],
    );
    assert!(zero.status.success());
    assert!(String::from_utf8_lossy(&zero.stderr).contains("warning: epochs = 0"));
    assert!(tmp.path().join("z/hpr.hprb").exists());
    assert!(!tmp.path().join("z/diff.hprb").exists());

    assert!(!hpr(
        tmp.path(),
        &["train", "--corpus", "missing.hpra", "--out", "m"]
    )
    .status
    .success());
}

#[test]
fn edit_rejects_dimension_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path(), "g", &[]);
    ok(
        tmp.path(),
        &[
            "gen",
            "--out",
            "narrow",
            "--d",
            "32",
            "--num-layers",
            "3",
            "--samples",
            "20",
        ],
    );
    ok(
        tmp.path(),
        &[
            "train",
            "--corpus",
            "g/corpus.hpra",
            "-k",
            "1",
            "--epochs",
            "1",
            "--no-baselines",
            "--out",
            "t",
        ],
    );
    let out = hpr(
        tmp.path(),
        &[
            "edit",
            "--corpus",
            "narrow/corpus.hpra",
            "--bundle",
            "t/hpr.hprb",
            "--out",
            "e",
        ],
    );
    assert!(!out.status.success());
    assert!(!tmp.path().join("e").exists());
}

#[test]
fn analyze_reports_norms_and_curve() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path(), "flat", &["--jitter", "0"]);
    let text = ok(
        tmp.path(),
        &[
            "analyze",
            "--corpus",
            "flat/corpus.hpra",
            "--epochs",
            "8",
            "--lr",
            "2e-3",
            "--out",
            "a",
        ],
    );
    assert!(text.contains("accuracy"));
    let a = json(tmp.path().join("a/analysis.json"));
    for layer in a["norms"]["layers"].as_object().unwrap().values() {
        assert!(layer["all"]["stddev"].as_f64().unwrap() < 1e-3);
    }
    let curve = a["probe_accuracy"].as_array().unwrap();
    assert_eq!(curve.len(), 3);
    assert!(curve.iter().all(|c| c["accuracy"].as_f64().unwrap() > 0.8));

    ok(
        tmp.path(),
        &[
            "train",
            "--corpus",
            "flat/corpus.hpra",
            "-k",
            "1",
            "--no-baselines",
            "--out",
            "t",
        ],
    );
    ok(
        tmp.path(),
        &[
            "analyze",
            "--corpus",
            "t/eval.hpra",
            "--bundle",
            "t/hpr.hprb",
            "--layers",
            "0,2",
            "--log10",
            "--out",
            "b",
        ],
    );
    let b = json(tmp.path().join("b/analysis.json"));
    assert_eq!(b["probe_accuracy"].as_array().unwrap().len(), 2);
    assert_eq!(b["norms"]["log10"], true);
    assert!(
        fs::read_to_string(tmp.path().join("b/norms.csv"))
            .unwrap()
            .lines()
            .count()
            > 1
    );
}

#[test]
fn sweep_emits_one_row_per_k() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path(), "g", &[]);
    ok(
        tmp.path(),
        &[
            "sweep",
            "--corpus",
            "g/corpus.hpra",
            "--ks",
            "1,2,3",
            "-k",
            "2",
            "--alphas",
            "0,15",
            "--out",
            "s",
        ],
    );
    let s = json(tmp.path().join("s/sweep.json"));
    let rows = s["rows"].as_array().unwrap();
    assert_eq!(
        rows.iter()
            .map(|r| r["k"].as_u64().unwrap())
            .collect::<Vec<_>>(),
        vec![1, 2, 3]
    );
    assert_eq!(s["steering"].as_array().unwrap().len(), 2);
    assert_eq!(
        s["steering"][0]["mean_relative_norm_change"].as_f64(),
        Some(0.0)
    );
    assert_eq!(
        fs::read_to_string(tmp.path().join("s/sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    assert!(!hpr(
        tmp.path(),
        &[
            "sweep",
            "--corpus",
            "g/corpus.hpra",
            "--ks",
            "1,5",
            "-k",
            "1",
            "--out",
            "bad"
        ]
    )
    .status
    .success());
}
