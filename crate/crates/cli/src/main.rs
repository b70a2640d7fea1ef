// SPDX-License-Identifier: MIT OR Apache-2.0

//! `hpr`: generate activation corpora, train HPR editors, edit, evaluate,
//! analyze and sweep.
//!
//! Settings are layered: built-in defaults, then the TOML file given with
//! `--config`, then command-line flags. Each command writes into a fresh
//! output directory and echoes its effective settings there as
//! `config.toml`.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Mode, Precision, RunConfig};

#[derive(Parser)]
#[command(
    name = "hpr",
    version,
    about = "Householder pseudo-rotation activation editing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-cone activation corpus.
    Gen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
    },
    /// Train per-layer probes and angle predictors and save the top-k bundle.
    Train {
        #[command(flatten)]
        common: Common,
        /// Input corpus.
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Edit a corpus with a saved bundle.
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Edit mode [built-in default: full].
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Steering strength for `--mode steer` [built-in default: 15].
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Score an edited corpus against its original with judge probes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        edited: PathBuf,
        /// Corpus the judge probes are trained on.
        #[arg(long)]
        judges: PathBuf,
        /// Score only the layers this bundle edits [default: every layer].
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Report activation norms and per-layer probe accuracy.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Use this bundle's probes instead of training probes on a split.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Report norms as log10.
        #[arg(long)]
        log10: bool,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train once and compare top-k edits over several k and steering strengths.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Layer counts to compare [built-in default: 1,3,5].
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Steering strengths to compare [built-in default: 15].
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[command(flatten)]
        train: TrainFlags,
    },
}

#[derive(Args)]
struct Common {
    /// TOML settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, which must not exist [default: <output-root>/<command>-<digest>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed [built-in default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Parent of default output directories.
    #[arg(long, env = "HPR_OUTPUT_ROOT", default_value = "hpr-runs")]
    output_root: PathBuf,
}

#[derive(Args)]
struct DataFlags {
    /// Activation dimension [built-in default: 256].
    #[arg(long)]
    d: Option<usize>,
    /// Layer count [built-in default: 12].
    #[arg(long)]
    num_layers: Option<u32>,
    /// Question count [built-in default: 500].
    #[arg(long)]
    samples: Option<usize>,
    /// Response tokens per answer, both labels [built-in default: 4].
    #[arg(long)]
    tokens: Option<u32>,
    /// Inverse per-coordinate noise scale of cone directions [built-in default: 10].
    #[arg(long)]
    concentration: Option<f64>,
    /// Relative radius jitter in [0, 1) [built-in default: 0.02].
    #[arg(long)]
    jitter: Option<f64>,
    /// Stored float width [built-in default: f32].
    #[arg(long, value_enum)]
    precision: Option<Precision>,
}

#[derive(Args)]
struct TrainFlags {
    /// Epochs per module [built-in default: 5].
    #[arg(long)]
    epochs: Option<usize>,
    /// Pairs per minibatch [built-in default: 16].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate [built-in default: 5e-4].
    #[arg(long)]
    lr: Option<f64>,
    /// Fraction of steps spent warming up [built-in default: 0.1].
    #[arg(long)]
    warmup: Option<f64>,
    /// Layers to edit [built-in default: 5].
    #[arg(short, long)]
    k: Option<usize>,
    /// Restrict to these layers, comma separated [default: all].
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<u32>>,
    /// Train,validation,test fractions [built-in default: 0.45,0.05,0.5].
    #[arg(long, value_delimiter = ',', num_args = 3)]
    split: Option<Vec<f64>>,
    /// Skip the steering and difference baselines.
    #[arg(long)]
    no_baselines: bool,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }
}

impl DataFlags {
    fn apply(&self, c: &mut RunConfig) {
        let data = &mut c.data;
        if let Some(v) = self.d {
            data.d = v;
        }
        if let Some(v) = self.num_layers {
            data.num_layers = v;
        }
        if let Some(v) = self.samples {
            data.n_samples = v;
        }
        if let Some(v) = self.tokens {
            data.tokens_positive = v;
            data.tokens_negative = v;
        }
        if let Some(v) = self.concentration {
            data.concentration = v;
        }
        if let Some(v) = self.jitter {
            data.radius_jitter = v;
        }
        if let Some(v) = self.precision {
            c.precision = v;
        }
    }
}

impl TrainFlags {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.train.lr = v;
        }
        if let Some(v) = self.warmup {
            c.train.warmup_fraction = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = &self.layers {
            c.layers = Some(v.clone());
        }
        if let Some(v) = &self.split {
            c.split = [v[0], v[1], v[2]];
        }
        if self.no_baselines {
            c.baselines = false;
        }
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen { common, data } => {
            let mut c = common.resolve()?;
            data.apply(&mut c);
            c.data.seed = c.seed;
            commands::gen(
                &c,
                &commands::Output::new(&common.out, &common.output_root, "gen"),
            )
        }
        Command::Train {
            common,
            corpus,
            train,
        } => {
            let mut c = common.resolve()?;
            train.apply(&mut c);
            commands::train(
                &c,
                &corpus,
                &commands::Output::new(&common.out, &common.output_root, "train"),
            )
        }
        Command::Edit {
            common,
            corpus,
            bundle,
            mode,
            alpha,
        } => {
            let mut c = common.resolve()?;
            if let Some(m) = mode {
                c.mode = m;
            }
            if let Some(a) = alpha {
                c.alpha = a;
            }
            commands::edit(
                &c,
                &corpus,
                &bundle,
                &commands::Output::new(&common.out, &common.output_root, "edit"),
            )
        }
        Command::Eval {
            common,
            original,
            edited,
            judges,
            bundle,
            train,
        } => {
            let mut c = common.resolve()?;
            train.apply(&mut c);
            let out = commands::Output::new(&common.out, &common.output_root, "eval");
            commands::eval(&c, &original, &edited, &judges, bundle.as_deref(), &out)
        }
        Command::Analyze {
            common,
            corpus,
            bundle,
            log10,
            train,
        } => {
            let mut c = common.resolve()?;
            train.apply(&mut c);
            c.log10 |= log10;
            let out = commands::Output::new(&common.out, &common.output_root, "analyze");
            commands::analyze(&c, &corpus, bundle.as_deref(), &out)
        }
        Command::Sweep {
            common,
            corpus,
            ks,
            alphas,
            train,
        } => {
            let mut c = common.resolve()?;
            train.apply(&mut c);
            if let Some(v) = ks {
                c.ks = v;
            }
            if let Some(v) = alphas {
                c.alphas = v;
            }
            commands::sweep(
                &c,
                &corpus,
                &commands::Output::new(&common.out, &common.output_root, "sweep"),
            )
        }
    }
}
