// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use hpr_core::angle::{init_layer_modules, joint_train, pair_target};
use hpr_core::data::split_corpus;
use hpr_core::scalar::bits_equal;
use hpr_core::{Corpus, TrainConfig};

fn train_once<T: hpr_core::Scalar>(
    corpus: &Corpus<T>,
    config: &TrainConfig,
) -> (Vec<T>, Vec<T>, f64, f64) {
    let pairs = corpus.make_pairs(0).unwrap();
    let (p, a) = init_layer_modules(corpus.d, 0, config, 11, 0).unwrap();
    let (p, a, log) = joint_train(p, a, &pairs, config, 11, 0).unwrap();
    let flat: Vec<T> = a
        .net
        .layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect();
    let first = log.epochs.first().map_or(f64::NAN, |e| e.total);
    let last = log.epochs.last().map_or(f64::NAN, |e| e.total);
    (p.theta, flat, first, last)
}

#[test]
fn training_is_bit_reproducible() {
    let c32: Corpus<f32> = common::small_synth(1).generate().unwrap();
    let c64: Corpus<f64> = common::small_synth(1).generate().unwrap();
    let cfg = common::quick_train();
    let (a1, b1, _, _) = train_once(&c32, &cfg);
    let (a2, b2, _, _) = train_once(&c32, &cfg);
    assert!(bits_equal(&a1, &a2) && bits_equal(&b1, &b2));
    let (a1, b1, _, _) = train_once(&c64, &cfg);
    let (a2, b2, _, _) = train_once(&c64, &cfg);
    assert!(bits_equal(&a1, &a2) && bits_equal(&b1, &b2));
}

#[test]
fn zero_epochs_leave_init() {
    let c: Corpus<f64> = common::small_synth(2).generate().unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let (p0, a0) = init_layer_modules::<f64>(c.d, 0, &cfg, 11, 0).unwrap();
    let (theta, net, _, _) = train_once(&c, &cfg);
    assert_eq!(theta, p0.theta);
    let flat: Vec<f64> = a0
        .net
        .layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect();
    assert_eq!(net, flat);
}

#[test]
fn losses_fall_and_angles_are_learned() {
    // at d = 32 the narrowest hidden layer has two units and can die outright
    let corpus: Corpus<f32> = hpr_core::data::SynthConfig {
        d: 128,
        ..common::small_synth(3)
    }
    .generate()
    .unwrap();
    let split = split_corpus(&corpus, [0.6, 0.1, 0.3], 3).unwrap();
    let cfg = common::quick_train();
    let (_, _, first, last) = train_once(&split.train, &cfg);
    assert!(last < 0.5 * first, "{first} -> {last}");
    let long = TrainConfig { epochs: 30, ..cfg };
    let trained =
        hpr_core::pipeline::train_layers(&split.train, &split.validation, &long, 3).unwrap();
    for (l, e) in &trained.editors {
        let pairs = split.test.make_pairs(*l).unwrap();
        assert!(e.probe.pair_accuracy(&pairs).unwrap() > 0.9);
        // the angle depends on the unseen partner, so the floor is the spread of the targets
        let targets: Vec<f64> = pairs
            .iter()
            .map(|p| pair_target(&p.positive.vector, &p.negative.vector).unwrap())
            .collect();
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let spread = targets.iter().map(|t| (t - mean).abs()).sum::<f64>() / targets.len() as f64;
        let mae = e.predictor.negative_mae(&pairs).unwrap();
        assert!(
            mae < 0.15 && mae < 1.5 * spread,
            "layer {l} angle mae {mae} vs spread {spread}"
        );
    }
}
