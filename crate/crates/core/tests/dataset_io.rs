mod common;

use std::fs;
use std::sync::Arc;

use rand::seq::SliceRandom;

use regionsense::dataset::{
    attribute_linear_probe, load_manifest, save_manifest, synth_dataset, validate_dataset, AttributeId, ClassId,
    Coding, Dataset, ProbeOptions, Split, SynthSpec, ViolationRule,
};
use regionsense::tensor::{quantize_unit, BinaryMask, Shape};
use regionsense::Error;

fn synth(n: usize, size: usize, seed: u64) -> Dataset<f32> {
    synth_dataset::<f32>(&SynthSpec::new(n, size, Coding::ForegroundCoded, 4, seed)).unwrap()
}

#[test]
fn manifest_round_trip_preserves_samples() {
    let ds = synth(24, 32, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = save_manifest(&ds, dir.path(), "manifest.jsonl").unwrap();
    let back = load_manifest::<f32>(&path).unwrap();
    assert_eq!(back.len(), ds.len());
    for (a, b) in ds.iter().zip(back.iter()) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.split, b.split);
        assert_eq!(a.class_label, b.class_label);
        assert_eq!(a.attributes, b.attributes);
        assert_eq!(a.object_mask, b.object_mask);
        assert_eq!(a.attribute_masks, b.attribute_masks);
        for (x, y) in a.image.data().iter().zip(b.image.data()) {
            assert_eq!(quantize_unit(*x as f64), quantize_unit(*y as f64));
        }
    }
    assert!(validate_dataset(&back).is_empty());
    // Saving what was loaded is a fixed point.
    let dir2 = tempfile::tempdir().unwrap();
    let again = load_manifest::<f32>(save_manifest(&back, dir2.path(), "m.jsonl").unwrap()).unwrap();
    for (a, b) in back.iter().zip(again.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn shape_mismatch_names_the_sample() {
    let ds = synth(4, 32, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = save_manifest(&ds, dir.path(), "manifest.jsonl").unwrap();
    let victim = &ds.samples()[2];
    let text = fs::read_to_string(&path).unwrap();
    let line = text.lines().nth(2).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line).unwrap();
    let mask_rel = rec["object_mask"].as_str().unwrap();
    image::GrayImage::new(16, 16).save(dir.path().join(mask_rel)).unwrap();
    let err = load_manifest::<f32>(&path).unwrap_err().to_string();
    assert!(err.contains(&victim.id), "{err}");
}

#[test]
fn malformed_records_report_their_line() {
    let ds = synth(3, 32, 6);
    let dir = tempfile::tempdir().unwrap();
    let path = save_manifest(&ds, dir.path(), "manifest.jsonl").unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    for (edit, needle) in [
        (lines[1].replace("\"horns\":0", "\"horns\":2").replace("\"horns\":1", "\"horns\":2"), "horns"),
        (lines[1].replace("\"split\":\"", "\"split\":\"x"), "line 2"),
        (lines[1].replace("\"class\":\"", "\"class\":\"not-a-"), "unknown class"),
    ] {
        let mut broken = lines.clone();
        broken[1] = &edit;
        fs::write(&path, broken.join("\n")).unwrap();
        let err = load_manifest::<f32>(&path).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }), "{err:?}");
        assert!(err.to_string().contains(needle), "{err}");
    }
    let dup = format!("{}\n{}\n", lines[0], lines[0]);
    fs::write(&path, dup).unwrap();
    assert!(load_manifest::<f32>(&path).unwrap_err().to_string().contains("duplicate"));
}

#[test]
fn validation_flags_each_broken_invariant() {
    let ds = synth(6, 32, 8);
    let mut samples: Vec<_> = ds.iter().cloned().collect();
    let text = AttributeId::from_name("text").unwrap();
    samples[0].object_mask = Arc::new(BinaryMask::ones(Shape::new(16, 16)));
    samples[1].attributes.insert(text);
    samples[1].attribute_masks.remove(&text);
    let absent = AttributeId::all()
        .find(|&a| !a.is_whole_object() && !samples[2].has_attribute(a))
        .unwrap();
    samples[2].attribute_masks.insert(absent, Arc::new(BinaryMask::ones(Shape::new(32, 32))));
    samples[3].class_label = ClassId(200);
    let broken = Dataset::from_samples(samples).unwrap();
    let v = validate_dataset(&broken);
    let rules: Vec<(String, ViolationRule)> = v.iter().map(|v| (v.sample_id.clone(), v.rule)).collect();
    let ids: Vec<&str> = broken.iter().map(|s| s.id.as_str()).collect();
    assert!(rules.contains(&(ids[0].into(), ViolationRule::ObjectMaskShapeMismatch)));
    assert!(rules.contains(&(ids[1].into(), ViolationRule::MissingAttributeMask)));
    assert!(rules.contains(&(ids[2].into(), ViolationRule::MaskForAbsentAttribute)));
    assert!(rules.contains(&(ids[3].into(), ViolationRule::UnknownClass)));
    assert!(v.iter().all(|v| ids[..4].contains(&v.sample_id.as_str())));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = synth(30, 32, 12);
    let b = synth(30, 32, 12);
    let c = synth(30, 32, 13);
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(x, y);
    }
    assert!(a.iter().zip(c.iter()).any(|(x, y)| x.image != y.image));
    let n_test = a.iter().filter(|s| s.split == Split::Test).count();
    assert_eq!(n_test, (30.0f64 * 0.25).round() as usize);
}

#[test]
fn probe_on_permuted_labels_is_near_chance() {
    let ds = synth_dataset::<f32>(&SynthSpec::new(2400, 16, Coding::ForegroundCoded, 4, 40)).unwrap();
    let real = attribute_linear_probe(&ds, 1, &ProbeOptions::default()).unwrap();

    let mut labels: Vec<ClassId> = ds.iter().map(|s| s.class_label).collect();
    labels.shuffle(&mut common::rng(41));
    let permuted = Dataset::from_samples(
        ds.iter()
            .zip(labels)
            .map(|(s, y)| {
                let mut s = s.clone();
                s.class_label = y;
                s
            })
            .collect(),
    )
    .unwrap();
    let test = permuted.filter_split(Split::Test);
    let mut counts = [0usize; 4];
    for s in test.iter() {
        counts[s.class_label.index()] += 1;
    }
    let chance = *counts.iter().max().unwrap() as f64 / test.len() as f64;
    let shuffled = attribute_linear_probe(&permuted, 1, &ProbeOptions::default()).unwrap();
    assert!(
        (shuffled.test_accuracy - chance).abs() <= 0.05,
        "permuted-label probe {} vs chance {chance}",
        shuffled.test_accuracy
    );
    assert!(real.test_accuracy > shuffled.test_accuracy);
}
