// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use hpr_core::bundle::{load_bundle, save_bundle, AnyBundle};
use hpr_core::data::{encode_corpus, read_corpus, split_corpus, write_corpus};
use hpr_core::editor::StreamTrace;
use hpr_core::metrics::{
    accuracy_csv, accuracy_table, norm_report, probe_accuracy_curve, LayerAccuracy, NormStats,
};
use hpr_core::pipeline::{
    config_digest, diff_bundle, evaluate_edit, judge_eval_split, layer_sweep, run_method,
    steering_bundle, steering_name, train_judges, train_layers, SweepRow,
};
use hpr_core::train::TrainLog;
use hpr_core::{edit_stream, Bundle, BundleMeta, Corpus, Scalar};
use serde::Serialize;

use crate::config::{Mode, Precision, RunConfig};

/// Where a command writes. The directory is created only once the results
/// are ready, and never over an existing path.
pub struct Output {
    explicit: Option<PathBuf>,
    root: PathBuf,
    command: &'static str,
}

impl Output {
    pub fn new(explicit: &Option<PathBuf>, root: &Path, command: &'static str) -> Self {
        Self {
            explicit: explicit.clone(),
            root: root.to_path_buf(),
            command,
        }
    }

    fn path(&self, c: &RunConfig, inputs: &[&Path]) -> PathBuf {
        self.explicit.clone().unwrap_or_else(|| {
            let inputs: Vec<String> = inputs.iter().map(|p| p.display().to_string()).collect();
            let digest = config_digest(&(c, inputs, self.command));
            self.root.join(format!("{}-{digest}", self.command))
        })
    }

    /// Fail early when the destination is taken.
    fn check(&self, c: &RunConfig, inputs: &[&Path]) -> Result<PathBuf> {
        let dir = self.path(c, inputs);
        ensure!(
            !dir.exists(),
            "output path {} already exists",
            dir.display()
        );
        Ok(dir)
    }

    fn create(&self, dir: &Path, c: &RunConfig) -> Result<()> {
        if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::create_dir(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let text = format!(
            "# effective settings of `hpr {}`\n{}",
            self.command,
            c.to_toml()?
        );
        write(dir, "config.toml", text)
    }
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<S: Serialize>(dir: &Path, name: &str, value: &S) -> Result<()> {
    write(dir, name, serde_json::to_string_pretty(value)? + "\n")
}

/// Float width recorded in a corpus header.
fn corpus_bits(path: &Path) -> Result<u32> {
    let bytes = fs::read(path).with_context(|| format!("reading corpus {}", path.display()))?;
    ensure!(
        bytes.len() >= 20,
        "{} is too short to be a corpus",
        path.display()
    );
    Ok(u32::from_le_bytes(
        bytes[16..20].try_into().expect("4 bytes"),
    ))
}

/// Run `$f::<T>` with `T` matching the stored float width of `$path`.
macro_rules! by_width {
    ($path:expr, $f:ident($($arg:expr),*)) => {
        match corpus_bits($path)? {
            64 => $f::<f64>($($arg),*),
            _ => $f::<f32>($($arg),*),
        }
    };
}

fn load<T: Scalar>(path: &Path) -> Result<Corpus<T>> {
    read_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn restrict<T: Scalar>(corpus: Corpus<T>, layers: &Option<Vec<u32>>) -> Result<Corpus<T>> {
    let Some(keep) = layers else {
        return Ok(corpus);
    };
    let present = corpus.layers();
    if let Some(missing) = keep.iter().find(|l| !present.contains(l)) {
        bail!("layer {missing} is not in the corpus (layers {present:?})");
    }
    let records = corpus
        .records
        .into_iter()
        .filter(|r| keep.contains(&r.layer_index))
        .collect();
    Ok(Corpus::new(corpus.d, corpus.num_layers, records)?)
}

fn selected_layers<T: Scalar>(bundle: &AnyBundle<T>) -> Vec<u32> {
    match bundle {
        AnyBundle::Hpr(b) => b.selected.clone(),
        AnyBundle::Steering(b) => b.selected.clone(),
        AnyBundle::Diff(b) => b.selected.clone(),
    }
}

fn meta(c: &RunConfig) -> BundleMeta {
    BundleMeta {
        seed: c.seed,
        config_digest: config_digest(c),
    }
}

#[derive(Serialize)]
struct GenManifest {
    d: usize,
    num_layers: u32,
    samples: usize,
    records: usize,
    float_bits: u32,
    bytes: usize,
    crc32: String,
}

pub fn gen(c: &RunConfig, out: &Output) -> Result<()> {
    c.validate()?;
    let dir = out.check(c, &[])?;
    let (bytes, corpus_len, samples) = match c.precision {
        Precision::F32 => {
            let corpus = c.data.generate::<f32>()?;
            (
                encode_corpus(&corpus),
                corpus.len(),
                corpus.sample_ids().len(),
            )
        }
        Precision::F64 => {
            let corpus = c.data.generate::<f64>()?;
            (
                encode_corpus(&corpus),
                corpus.len(),
                corpus.sample_ids().len(),
            )
        }
    };
    let manifest = GenManifest {
        d: c.data.d,
        num_layers: c.data.num_layers,
        samples,
        records: corpus_len,
        float_bits: u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")),
        bytes: bytes.len(),
        crc32: format!("{:08x}", stored_crc(&bytes)),
    };
    out.create(&dir, c)?;
    write(&dir, "corpus.hpra", &bytes)?;
    write_json(&dir, "manifest.json", &manifest)?;
    println!(
        "wrote {} records ({} samples, d = {}, {} layers) to {}",
        manifest.records,
        manifest.samples,
        manifest.d,
        manifest.num_layers,
        dir.display()
    );
    Ok(())
}

// The trailing four bytes of a corpus are its CRC-32.
fn stored_crc(bytes: &[u8]) -> u32 {
    u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"))
}

#[derive(Serialize)]
struct TrainSummary {
    split_sizes: [usize; 3],
    selected: Vec<u32>,
    ranking: Vec<(u32, f64)>,
    logs: BTreeMap<u32, TrainLog>,
}

pub fn train(c: &RunConfig, corpus: &Path, out: &Output) -> Result<()> {
    c.validate()?;
    let dir = out.check(c, &[corpus])?;
    by_width!(corpus, train_typed(c, corpus, out, &dir))
}

fn train_typed<T: Scalar>(c: &RunConfig, path: &Path, out: &Output, dir: &Path) -> Result<()> {
    let corpus = restrict(load::<T>(path)?, &c.layers)?;
    let layers = corpus.layers();
    ensure!(
        c.k <= layers.len(),
        "k = {} exceeds the {} available layers",
        c.k,
        layers.len()
    );
    if c.train.epochs == 0 {
        eprintln!("warning: epochs = 0, saved modules keep their initial weights");
    }
    let split = split_corpus(&corpus, c.split, c.seed)?;
    let trained = train_layers(&split.train, &split.validation, &c.train, c.seed)?;
    let bundle = trained.bundle(c.k, meta(c))?;
    let selected = bundle.selected.clone();
    let baselines = if c.baselines {
        let s = steering_bundle(&split.train, &selected, c.alpha, meta(c))?;
        let d = diff_bundle(&split.train, &selected, &c.train, meta(c))?;
        Some((s, d))
    } else {
        None
    };
    let (judge, eval) = judge_eval_split(&split.test, c.seed);
    let summary = TrainSummary {
        split_sizes: [
            split.train.sample_ids().len(),
            split.validation.sample_ids().len(),
            split.test.sample_ids().len(),
        ],
        selected: selected.clone(),
        ranking: trained.ranking(),
        logs: trained.logs.clone(),
    };

    out.create(dir, c)?;
    save_bundle(&AnyBundle::from(bundle), dir.join("hpr.hprb"))?;
    if let Some((s, d)) = baselines {
        save_bundle(&AnyBundle::from(s), dir.join("steering.hprb"))?;
        save_bundle(&AnyBundle::from(d), dir.join("diff.hprb"))?;
    }
    write_corpus(&judge, dir.join("judge.hpra"))?;
    write_corpus(&eval, dir.join("eval.hpra"))?;
    write_json(dir, "training.json", &summary)?;

    println!("layer  validation accuracy");
    for (l, acc) in &summary.ranking {
        let mark = if selected.contains(l) { "  *" } else { "" };
        println!("{l:>5}  {acc:.4}{mark}");
    }
    println!("selected layers {selected:?}; outputs in {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct EditSummary<'a> {
    mode: Mode,
    alpha: Option<f64>,
    edited: u64,
    fallbacks: u64,
    trace: &'a StreamTrace,
}

pub fn edit(c: &RunConfig, corpus: &Path, bundle: &Path, out: &Output) -> Result<()> {
    c.validate()?;
    let dir = out.check(c, &[corpus, bundle])?;
    by_width!(corpus, edit_typed(c, corpus, bundle, out, &dir))
}

fn edit_typed<T: Scalar>(
    c: &RunConfig,
    path: &Path,
    bundle_path: &Path,
    out: &Output,
    dir: &Path,
) -> Result<()> {
    let corpus = load::<T>(path)?;
    let any = load_bundle::<T>(bundle_path)
        .with_context(|| format!("loading bundle {}", bundle_path.display()))?;
    let method = any.method();
    let (edited, trace) = match (c.mode, any) {
        (mode, AnyBundle::Hpr(b)) if mode.hpr().is_some() => {
            edit_stream(&b.with_mode(mode.hpr().expect("hpr mode")), &corpus)?
        }
        (Mode::Steer, AnyBundle::Steering(b)) => {
            let layers = b
                .layers
                .iter()
                .map(|(l, s)| (*l, s.with_alpha(c.alpha)))
                .collect();
            edit_stream(&Bundle::new(b.d, layers, b.selected, b.meta)?, &corpus)?
        }
        (Mode::Diff, AnyBundle::Diff(b)) => edit_stream(&b, &corpus)?,
        (mode, _) => bail!("mode {mode} cannot use a {method:?} bundle"),
    };
    let summary = EditSummary {
        mode: c.mode,
        alpha: (c.mode == Mode::Steer).then_some(c.alpha),
        edited: trace.edited(),
        fallbacks: trace.fallbacks(),
        trace: &trace,
    };
    out.create(dir, c)?;
    write_corpus(&edited, dir.join("edited.hpra"))?;
    write_json(dir, "trace.json", &summary)?;
    println!(
        "mode {}: edited {} of {} vectors, {} fallbacks, {} passed through; outputs in {}",
        c.mode,
        summary.edited,
        trace.total_vectors,
        summary.fallbacks,
        trace.passed_through,
        dir.display()
    );
    Ok(())
}

pub fn eval(
    c: &RunConfig,
    original: &Path,
    edited: &Path,
    judges: &Path,
    bundle: Option<&Path>,
    out: &Output,
) -> Result<()> {
    c.validate()?;
    let mut inputs = vec![original, edited, judges];
    inputs.extend(bundle);
    let dir = out.check(c, &inputs)?;
    by_width!(
        original,
        eval_typed(c, original, edited, judges, bundle, out, &dir)
    )
}

fn eval_typed<T: Scalar>(
    c: &RunConfig,
    original: &Path,
    edited: &Path,
    judges: &Path,
    bundle: Option<&Path>,
    out: &Output,
    dir: &Path,
) -> Result<()> {
    let before = load::<T>(original)?;
    let after = load::<T>(edited)?;
    ensure!(
        before.len() == after.len()
            && before.records.iter().zip(&after.records).all(|(a, b)| {
                (a.sample_id, a.token_index, a.layer_index, a.label)
                    == (b.sample_id, b.token_index, b.layer_index, b.label)
            }),
        "{} is not an edit of {}: records differ",
        edited.display(),
        original.display()
    );
    let layers = match bundle {
        Some(p) => selected_layers(
            &load_bundle::<T>(p).with_context(|| format!("loading bundle {}", p.display()))?,
        ),
        None => c.layers.clone().unwrap_or_default(),
    };
    let judge_corpus = load::<T>(judges)?;
    let probes = train_judges(&judge_corpus, &before.layers(), &c.train, c.seed)?;
    let report = evaluate_edit(
        "eval",
        &before,
        &after,
        &probes,
        &layers,
        StreamTrace::default(),
    )?;

    let mut text = String::new();
    let scope = if layers.is_empty() {
        "all layers".to_string()
    } else {
        format!("layers {layers:?}")
    };
    writeln!(text, "scored {scope}")?;
    writeln!(
        text,
        "negatives judged positive after edit: {:.4} of {}",
        report.negative_flip_rate, report.negatives
    )?;
    writeln!(
        text,
        "positives changed: {} of {}",
        report.positives_changed, report.positives
    )?;
    writeln!(
        text,
        "relative norm change: mean {:.3e}, max {:.3e}",
        report.mean_relative_norm_change, report.max_relative_norm_change
    )?;
    writeln!(text, "{}", report.shift)?;
    out.create(dir, c)?;
    write(dir, "report.txt", &text)?;
    write_json(dir, "report.json", &report)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct Analysis {
    norms: NormStats,
    probe_accuracy: Vec<LayerAccuracy>,
}

pub fn analyze(c: &RunConfig, corpus: &Path, bundle: Option<&Path>, out: &Output) -> Result<()> {
    c.validate()?;
    let mut inputs = vec![corpus];
    inputs.extend(bundle);
    let dir = out.check(c, &inputs)?;
    by_width!(corpus, analyze_typed(c, corpus, bundle, out, &dir))
}

fn analyze_typed<T: Scalar>(
    c: &RunConfig,
    path: &Path,
    bundle: Option<&Path>,
    out: &Output,
    dir: &Path,
) -> Result<()> {
    let corpus = restrict(load::<T>(path)?, &c.layers)?;
    let layers = corpus.layers();
    let norms = norm_report(&corpus, c.log10)?;
    let curve = match bundle {
        Some(p) => {
            let b = load_bundle::<T>(p)
                .with_context(|| format!("loading bundle {}", p.display()))?
                .into_hpr()?;
            let probes = b
                .layers
                .into_iter()
                .filter(|(l, _)| layers.contains(l))
                .map(|(l, e)| (l, e.probe))
                .collect();
            probe_accuracy_curve(&corpus, &probes)?
        }
        None => {
            let split = split_corpus(&corpus, c.split, c.seed)?;
            let probes = train_judges(&split.train, &layers, &c.train, c.seed)?;
            probe_accuracy_curve(&split.test, &probes)?
        }
    };
    out.create(dir, c)?;
    write(dir, "norms.txt", norms.table())?;
    write(dir, "norms.csv", norms.csv())?;
    write(dir, "probe_accuracy.csv", accuracy_csv(&curve))?;
    write_json(
        dir,
        "analysis.json",
        &Analysis {
            norms: norms.clone(),
            probe_accuracy: curve.clone(),
        },
    )?;
    print!("{}\n{}", norms.table(), accuracy_table(&curve));
    Ok(())
}

#[derive(Serialize)]
struct SteeringRow {
    alpha: f64,
    layers: Vec<u32>,
    edited_layer_flip_rate: f64,
    mean_relative_norm_change: f64,
    false_to_true: usize,
    true_to_false: usize,
}

#[derive(Serialize)]
struct Sweep {
    rows: Vec<SweepRow>,
    steering: Vec<SteeringRow>,
}

pub fn sweep(c: &RunConfig, corpus: &Path, out: &Output) -> Result<()> {
    c.validate()?;
    let dir = out.check(c, &[corpus])?;
    by_width!(corpus, sweep_typed(c, corpus, out, &dir))
}

fn sweep_typed<T: Scalar>(c: &RunConfig, path: &Path, out: &Output, dir: &Path) -> Result<()> {
    let corpus = restrict(load::<T>(path)?, &c.layers)?;
    let layers = corpus.layers();
    if let Some(k) = c.ks.iter().chain([&c.k]).find(|&&k| k > layers.len()) {
        bail!("k = {k} exceeds the {} available layers", layers.len());
    }
    let split = split_corpus(&corpus, c.split, c.seed)?;
    let trained = train_layers(&split.train, &split.validation, &c.train, c.seed)?;
    let (judge, eval) = judge_eval_split(&split.test, c.seed);
    let judges = train_judges(&judge, &layers, &c.train, c.seed)?;
    let rows = layer_sweep(&trained, &eval, &judges, &c.ks, &meta(c))?;
    let selected = trained.bundle(c.k, meta(c))?.selected;
    let mut steering = Vec::new();
    for &alpha in &c.alphas {
        let b = steering_bundle(&split.train, &selected, alpha, meta(c))?;
        let r = run_method(&steering_name(alpha), &b, &eval, &judges)?;
        steering.push(SteeringRow {
            alpha,
            layers: selected.clone(),
            edited_layer_flip_rate: r.negative_flip_rate,
            mean_relative_norm_change: r.mean_relative_norm_change,
            false_to_true: r.shift.false_to_true,
            true_to_false: r.shift.true_to_false,
        });
    }

    let mut table =
        String::from("    k  success  edited-layer flip  norm change  edited  fallbacks  layers\n");
    let mut csv = String::from(
        "k,success_rate,edited_layer_flip_rate,mean_relative_norm_change,edited,fallbacks\n",
    );
    for r in &rows {
        writeln!(
            table,
            "{:>5}  {:>7.4}  {:>17.4}  {:>11.3e}  {:>6}  {:>9}  {:?}",
            r.k,
            r.success_rate,
            r.edited_layer_flip_rate,
            r.mean_relative_norm_change,
            r.edited,
            r.fallbacks,
            r.layers
        )?;
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.k,
            r.success_rate,
            r.edited_layer_flip_rate,
            r.mean_relative_norm_change,
            r.edited,
            r.fallbacks
        )?;
    }
    if !steering.is_empty() {
        writeln!(table, "\nsteering on layers {selected:?}\n  alpha  edited-layer flip  norm change  F->T  T->F")?;
        for s in &steering {
            writeln!(
                table,
                "{:>7}  {:>17.4}  {:>11.3e}  {:>4}  {:>4}",
                s.alpha,
                s.edited_layer_flip_rate,
                s.mean_relative_norm_change,
                s.false_to_true,
                s.true_to_false
            )?;
        }
    }
    out.create(dir, c)?;
    write(dir, "sweep.txt", &table)?;
    write(dir, "sweep.csv", &csv)?;
    write_json(dir, "sweep.json", &Sweep { rows, steering })?;
    print!("{table}");
    Ok(())
}
