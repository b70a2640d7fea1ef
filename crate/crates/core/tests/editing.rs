// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use hpr_core::bundle::{load_bundle, save_bundle, AnyBundle};
use hpr_core::data::ActivationRecord;
use hpr_core::editor::{edit_stream, BundleMeta, EditMode};
use hpr_core::linalg::{angle_between, householder_reflect, norm};
use hpr_core::metrics::norm_report;
use hpr_core::scalar::bits_equal;
use hpr_core::{Corpus, HprError, Label};

#[test]
fn empty_selection_is_identity() {
    let (_, split, trained) = common::trained(1);
    let bundle = trained.bundle(0, BundleMeta::default()).unwrap();
    let (out, trace) = edit_stream(&bundle, &split.test).unwrap();
    assert_eq!(out, split.test);
    assert_eq!(trace.edited(), 0);
    assert_eq!(trace.passed_through as usize, split.test.len());
}

#[test]
fn all_positive_layer_untouched() {
    let (_, split, trained) = common::trained(2);
    let bundle = trained.bundle(1, BundleMeta::default()).unwrap();
    let layer = bundle.selected[0];
    let probe = &bundle.layers[&layer].probe;
    // only records the probe calls positive
    let records: Vec<ActivationRecord<f32>> = split
        .test
        .layer_records(layer)
        .filter(|r| probe.classify(&r.vector).unwrap() == Label::Positive)
        .cloned()
        .collect();
    assert!(!records.is_empty());
    let input = Corpus::new(split.test.d, split.test.num_layers, records).unwrap();
    let (out, trace) = edit_stream(&bundle, &input).unwrap();
    assert_eq!(out, input);
    assert_eq!(trace.edited(), 0);
    assert_eq!(trace.layers[&layer].vectors as usize, input.len());
}

#[test]
fn trace_fraction_matches_recount() {
    let (_, split, trained) = common::trained(3);
    let bundle = trained.bundle(1, BundleMeta::default()).unwrap();
    let layer = bundle.selected[0];
    let (out, trace) = edit_stream(&bundle, &split.test).unwrap();
    let (mut negatives, mut changed) = (0usize, 0usize);
    for (a, b) in split.test.records.iter().zip(&out.records) {
        if a.layer_index == layer && a.label == Label::Negative {
            negatives += 1;
            if !bits_equal(&a.vector, &b.vector) {
                changed += 1;
            }
        }
    }
    let recount = changed as f64 / negatives as f64;
    assert_eq!(trace.edited_negative_fraction().unwrap(), recount);
    assert!(recount > 0.9, "edited fraction {recount}");
}

#[test]
fn full_mode_geometry_and_norms() {
    let (_, split, trained) = common::trained(4);
    let bundle = trained.bundle(3, BundleMeta::default()).unwrap();
    let mut checked = 0;
    let mut flipped = 0;
    for r in &split.test.records {
        let e = &bundle.layers[&r.layer_index];
        let (out, t) = e.edit_activation(&r.vector).unwrap();
        if !t.edited {
            continue;
        }
        checked += 1;
        let a: Vec<f64> = r.vector.iter().map(|&x| f64::from(x)).collect();
        let o: Vec<f64> = out.iter().map(|&x| f64::from(x)).collect();
        let na = norm(&a);
        assert!((norm(&o) - na).abs() <= 1e-5 * na);
        // residual after projecting onto span{a, Ha}
        let theta: Vec<f64> = e.probe.theta.iter().map(|&x| f64::from(x)).collect();
        let ha = householder_reflect(&a, &theta).unwrap();
        let u: Vec<f64> = a.iter().map(|x| x / na).collect();
        let along: f64 = ha.iter().zip(&u).map(|(x, y)| x * y).sum();
        let w: Vec<f64> = ha.iter().zip(&u).map(|(x, y)| x - along * y).collect();
        let nw = norm(&w);
        let v: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let (cu, cv): (f64, f64) = (
            o.iter().zip(&u).map(|(x, y)| x * y).sum(),
            o.iter().zip(&v).map(|(x, y)| x * y).sum(),
        );
        let resid: Vec<f64> = o
            .iter()
            .zip(u.iter().zip(&v))
            .map(|(x, (p, q))| x - cu * p - cv * q)
            .collect();
        assert!(norm(&resid) <= 1e-5 * na);
        let achieved = angle_between(&out, &r.vector).unwrap().radians();
        assert!(
            (achieved - t.gamma1.unwrap()).abs() <= 1e-4,
            "{achieved} vs {:?}",
            t.gamma1
        );
        if e.probe.classify(&out).unwrap() == Label::Positive {
            flipped += 1;
        }
    }
    assert!(checked > 100);
    assert!(
        flipped as f64 >= 0.9 * checked as f64,
        "{flipped}/{checked}"
    );
}

#[test]
fn reflection_only_and_off_modes() {
    let (_, split, trained) = common::trained(5);
    let bundle = trained.bundle(3, BundleMeta::default()).unwrap();
    let off = bundle.clone().with_mode(EditMode::Off);
    let (out, _) = edit_stream(&off, &split.test).unwrap();
    assert_eq!(out, split.test);
    let reflect = bundle.with_mode(EditMode::ReflectionOnly);
    for r in split.test.records.iter().take(300) {
        let e = &reflect.layers[&r.layer_index];
        let (o, t) = e.edit_activation(&r.vector).unwrap();
        if t.edited {
            let expected = householder_reflect(&r.vector, &e.probe.theta).unwrap();
            let achieved = angle_between(&o, &r.vector).unwrap().radians();
            assert!((achieved - t.gamma2.unwrap()).abs() < 1e-4);
            assert!(angle_between(&o, &expected).unwrap().radians() < 1e-4);
        } else {
            assert!(bits_equal(&o, &r.vector));
        }
    }
}

#[test]
fn norm_report_survives_editing() {
    let (_, split, trained) = common::trained(6);
    let bundle = trained.bundle(3, BundleMeta::default()).unwrap();
    let (out, _) = edit_stream(&bundle, &split.test).unwrap();
    let before = norm_report(&split.test, false).unwrap();
    let after = norm_report(&out, false).unwrap();
    assert!(before.max_mean_difference(&after).unwrap() <= 1e-4);
}

#[test]
fn saved_bundle_edits_identically() {
    let (_, split, trained) = common::trained(7);
    let meta = BundleMeta {
        seed: 7,
        config_digest: "test".into(),
    };
    let bundle = trained.bundle(2, meta).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("editors.hprb");
    save_bundle(&AnyBundle::Hpr(bundle.clone()), &path).unwrap();
    let loaded = load_bundle::<f32>(&path).unwrap().into_hpr().unwrap();
    assert_eq!(loaded, bundle);
    assert_eq!(
        edit_stream(&loaded, &split.test).unwrap().0,
        edit_stream(&bundle, &split.test).unwrap().0
    );
}

#[test]
fn dimension_mismatch_rejected() {
    let (_, _, trained) = common::trained(8);
    let bundle = trained.bundle(1, BundleMeta::default()).unwrap();
    let other: Corpus<f32> = hpr_core::data::SynthConfig {
        d: 8,
        ..common::small_synth(8)
    }
    .generate()
    .unwrap();
    assert!(matches!(
        edit_stream(&bundle, &other),
        Err(HprError::DimensionMismatch { .. })
    ));
}
