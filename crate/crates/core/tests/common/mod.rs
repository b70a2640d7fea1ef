// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use hpr_core::data::{split_corpus, Split, SynthConfig};
use hpr_core::pipeline::{train_layers, TrainedLayers};
use hpr_core::{Corpus, TrainConfig};

pub fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        d: 32,
        num_layers: 3,
        n_samples: 160,
        tokens_positive: 3,
        tokens_negative: 3,
        seed,
        ..SynthConfig::default()
    }
}

pub fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 8,
        lr: 2e-3,
        ..TrainConfig::default()
    }
}

pub fn trained(seed: u64) -> (Corpus<f32>, Split<f32>, TrainedLayers<f32>) {
    let corpus: Corpus<f32> = small_synth(seed).generate().unwrap();
    let split = split_corpus(&corpus, [0.5, 0.1, 0.4], seed).unwrap();
    let layers = train_layers(&split.train, &split.validation, &quick_train(), seed).unwrap();
    (corpus, split, layers)
}
