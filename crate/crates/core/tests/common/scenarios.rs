//! Multi-step fixtures shared by the topic suites and the acceptance run.

use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use rand::Rng;

use regionsense::attribution::{generalization_eval, select_best_features, AttributionOptions, ClassScope};
use regionsense::bridge::{
    cross_entropy_gradient, cross_entropy_loss, train_linear_head, Backend, Bridge, BridgeOptions, GradTarget,
    HeadHyper, LinearHead, ReferenceBackend, ReferenceConfig,
};
use regionsense::corruption::NoiseKind;
use regionsense::dataset::{synth_dataset, AttributeId, Coding, Dataset, Split, SynthSpec};
use regionsense::metrics::{
    aggregate, background_removal_eval, instance_sensitivity, noise_sweep, write_trials_jsonl, ModelRecords, SweepSpec,
};
use regionsense::Error;
use regionsense::stats::median;
use regionsense::tensor::{BinaryMask, ImageTensor, Shape};

use super::{dataset_from, with_attribute, without_attributes, Instrumented};

pub const FD_STEP: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Largest relative error between analytic and central-difference gradients
/// over `probes` random input probes and as many linear-head parameter probes.
pub fn gradient_check(probes: usize, seed: u64) -> f64 {
    let mut rng = super::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let cfg = ReferenceConfig {
            image_size: 16,
            n_classes: 3,
            feature_dim: 6,
            pooling_cell: 4,
        };
        let mut b = ReferenceBackend::<f64>::new(cfg, rng.random()).unwrap();
        let mut head = LinearHead::<f64>::zeros(3, 6);
        for w in head.weights.iter_mut().chain(head.bias.iter_mut()) {
            *w = rng.random_range(-2.0..2.0);
        }
        b.set_head(&head).unwrap();
        if rng.random::<bool>() {
            let gate = BinaryMask::from_fn(Shape::new(4, 4), |y, x| (y + x) % 3 != 0);
            b.set_spatial_gate(rng.random_range(0..6), &gate).unwrap();
        }
        let x = super::random_image(&mut rng, 16, 16);
        let target = if rng.random::<bool>() {
            GradTarget::Feature(rng.random_range(0..6))
        } else {
            GradTarget::ClassLogit(rng.random_range(0..3))
        };
        let value = |img: &ImageTensor<f64>| match target {
            GradTarget::Feature(j) => b.features_of(img).unwrap()[j],
            GradTarget::ClassLogit(c) => b.logits_of(img).unwrap()[c],
        };
        let grad = b.input_gradient(&x, target).unwrap();
        let i = rng.random_range(0..x.data().len());
        let shifted = |d: f64| {
            let mut v = x.data().to_vec();
            v[i] += d;
            ImageTensor::new(16, 16, v).unwrap()
        };
        let numeric = (value(&shifted(FD_STEP)) - value(&shifted(-FD_STEP))) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grad[i], numeric));

        // Head parameters under the training loss.
        let feats: Vec<Vec<f64>> = (0..8).map(|_| (0..6).map(|_| rng.random_range(0.0..3.0)).collect()).collect();
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
        let (gw, gb) = cross_entropy_gradient(&head, &feats, &labels);
        let on_bias = rng.random::<bool>();
        let k = if on_bias { rng.random_range(0..3) } else { rng.random_range(0..18) };
        let loss_at = |d: f64| {
            let mut h = head.clone();
            if on_bias {
                h.bias[k] += d;
            } else {
                h.weights[k] += d;
            }
            cross_entropy_loss(&h, &feats, &labels)
        };
        let numeric = (loss_at(FD_STEP) - loss_at(-FD_STEP)) / (2.0 * FD_STEP);
        let analytic = if on_bias { gb[k] } else { gw[k] };
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

pub const DIRECTIONAL_SAMPLES: usize = 200;
pub const DIRECTIONAL_SIZE: usize = 64;
pub const DIRECTIONAL_CLASSES: usize = 4;

pub fn directional_backend() -> ReferenceBackend<f32> {
    let cfg = ReferenceConfig {
        image_size: DIRECTIONAL_SIZE,
        n_classes: DIRECTIONAL_CLASSES,
        feature_dim: 32,
        pooling_cell: 8,
    };
    ReferenceBackend::new(cfg, 3).unwrap()
}

/// Head settings for the synthetic checks. The library defaults (lr 1e-4,
/// ten epochs) barely move a head on 150 samples.
pub fn synthetic_head() -> HeadHyper {
    HeadHyper {
        lr: 0.05,
        epochs: 100,
        ..HeadHyper::default()
    }
}

#[derive(Debug, Clone)]
pub struct Directional {
    pub train_accuracy: f64,
    pub records: usize,
    pub expected_records: usize,
    pub rfs: f64,
    pub median_irfs: f64,
    pub clean_accuracy: f64,
    pub ablated_accuracy: f64,
    pub elapsed: Duration,
}

/// Trains the reference head on one synthetic coding, runs the default ℓ∞
/// sweep over the whole dataset and the gray-background ablation.
pub fn directional(coding: Coding) -> Directional {
    let start = Instant::now();
    let ds = synth_dataset::<f32>(&SynthSpec::new(
        DIRECTIONAL_SAMPLES,
        DIRECTIONAL_SIZE,
        coding,
        DIRECTIONAL_CLASSES,
        7,
    ))
    .unwrap();
    let mut bridge = Bridge::connect(directional_backend(), BridgeOptions::default()).unwrap();
    let report = train_linear_head(&mut bridge, &ds.filter_split(Split::Train), &synthetic_head()).unwrap();
    let spec = SweepSpec::new(NoiseKind::LinfGaussian, 11);
    let records = noise_sweep(&mut bridge, &ds, &spec, None).unwrap();
    let labels = ds.labels();
    let agg = aggregate(&[ModelRecords { model: "reference", records: &records }], &labels, &[]).unwrap();
    let inst = instance_sensitivity(&records, &labels).unwrap();
    let irfs: Vec<f64> = inst.iter().map(|r| r.irfs).collect();
    let removal = background_removal_eval(&mut bridge, &ds, None).unwrap();
    Directional {
        train_accuracy: report.train_accuracy,
        records: records.len(),
        expected_records: spec.expected_records(ds.len()),
        rfs: agg[0].rfs.unwrap(),
        median_irfs: median(&irfs).unwrap(),
        clean_accuracy: removal.clean_acc,
        ablated_accuracy: removal.ablated_acc,
        elapsed: start.elapsed(),
    }
}

pub const PLANTED_FEATURES: [usize; 2] = [5, 17];

/// Fixed attribute regions, one per planted feature, in 64x64 pixels.
pub fn planted_regions() -> [(AttributeId, BinaryMask); 2] {
    let shape = Shape::new(64, 64);
    [
        (
            AttributeId::from_name("horns").unwrap(),
            BinaryMask::from_fn(shape, |y, x| (8..32).contains(&y) && (16..40).contains(&x)),
        ),
        (
            AttributeId::from_name("wings").unwrap(),
            BinaryMask::from_fn(shape, |y, x| (40..56).contains(&y) && (32..56).contains(&x)),
        ),
    ]
}

/// Synthetic samples stripped of their own attributes; every second sample
/// carries the first planted attribute and every third the second.
pub fn planted_dataset() -> Dataset<f32> {
    let base = synth_dataset::<f32>(&SynthSpec::new(120, 64, Coding::ForegroundCoded, 4, 21)).unwrap();
    let regions = planted_regions();
    let samples = base
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut out = without_attributes(s);
            if i % 2 == 0 {
                out = with_attribute(&out, regions[0].0, regions[0].1.clone());
            }
            if i % 3 == 0 {
                out = with_attribute(&out, regions[1].0, regions[1].1.clone());
            }
            out
        })
        .collect();
    dataset_from(samples)
}

/// The directional backend with each planted feature gated to its region
/// and given a flat detector, so its saliency is the region itself.
pub fn wired_backend() -> ReferenceBackend<f32> {
    let mut b = directional_backend();
    for (&j, (_, region)) in PLANTED_FEATURES.iter().zip(planted_regions().iter()) {
        b.set_feature_detector(j, [0.2, 0.2, 0.2], 1.0).unwrap();
        b.set_spatial_gate(j, region).unwrap();
    }
    b
}

#[derive(Debug, Clone)]
pub struct Planted {
    /// Per planted attribute: (selected feature, train mean IOU, test mean IOU).
    pub recovered: Vec<(usize, f64, f64)>,
    /// Best train IOU an unwired backend reaches on the same attributes.
    pub unwired_train_iou: Vec<f64>,
    pub unwired_test_iou: Vec<f64>,
    pub saliency_calls: usize,
    pub expected_calls: usize,
}

pub fn planted_attribution() -> Planted {
    let ds = planted_dataset();
    let train = ds.filter_split(Split::Train);
    let test = ds.filter_split(Split::Test);
    let opts = AttributionOptions::default();

    let (wired, counts) = Instrumented::new(wired_backend());
    let mut bridge = Bridge::connect(
        wired,
        BridgeOptions {
            verify_determinism: false,
            ..BridgeOptions::default()
        },
    )
    .unwrap();
    let selection = select_best_features(&mut bridge, &train, ClassScope::All, &opts).unwrap();
    let saliency_calls = counts.saliency.load(Ordering::SeqCst);
    let results = generalization_eval(&mut bridge, &test, &selection, &opts).unwrap();

    let mut plain = Bridge::connect(directional_backend(), BridgeOptions::default()).unwrap();
    let baseline = select_best_features(&mut plain, &train, ClassScope::All, &opts).unwrap();
    let baseline_results = generalization_eval(&mut plain, &test, &baseline, &opts).unwrap();

    let attrs: Vec<AttributeId> = planted_regions().iter().map(|(a, _)| *a).collect();
    let pick = |a: AttributeId| results.iter().find(|r| r.attribute == a).unwrap();
    Planted {
        recovered: attrs
            .iter()
            .map(|&a| {
                let r = pick(a);
                (r.feature_index, r.train_mean_iou, r.test_iou_mean)
            })
            .collect(),
        unwired_train_iou: attrs
            .iter()
            .map(|&a| baseline.entries.iter().find(|e| e.attribute == a).unwrap().train_mean_iou)
            .collect(),
        unwired_test_iou: attrs
            .iter()
            .map(|&a| baseline_results.iter().find(|r| r.attribute == a).unwrap().test_iou_mean)
            .collect(),
        saliency_calls,
        expected_calls: bridge.feature_dim() * attrs.len(),
    }
}

#[derive(Debug, Clone)]
pub struct Resume {
    pub records: usize,
    pub expected_records: usize,
    /// Records in the checkpoint when the injected fault stopped the sweep.
    pub completed_before_fault: usize,
    pub byte_identical: bool,
}

/// Clean sweep versus a sweep that fails on its second backend call and is
/// resumed from its checkpoint by a fresh session.
pub fn sweep_resume() -> Resume {
    let ds = synth_dataset::<f32>(&SynthSpec::new(16, 64, Coding::ForegroundCoded, 4, 31)).unwrap();
    let spec = SweepSpec {
        trials: 3,
        ..SweepSpec::new(NoiseKind::LinfGaussian, 5)
    };
    let opts = BridgeOptions {
        batch_size: 100_000,
        verify_determinism: false,
    };
    let dir = tempfile::tempdir().unwrap();
    let mut bridge = Bridge::connect(directional_backend(), opts).unwrap();
    let clean = noise_sweep(&mut bridge, &ds, &spec, None).unwrap();
    write_trials_jsonl(&dir.path().join("clean.jsonl"), &clean).unwrap();

    let ckpt = dir.path().join("partial.jsonl");
    let (mut faulty, _) = Instrumented::new(directional_backend());
    faulty.fail_predict_on = Some(1);
    let mut bridge = Bridge::connect(faulty, opts).unwrap();
    let completed_before_fault = match noise_sweep(&mut bridge, &ds, &spec, Some(&ckpt)) {
        Err(Error::SweepInterrupted { completed, .. }) => completed,
        other => panic!("expected an interrupted sweep, got {other:?}"),
    };
    let mut bridge = Bridge::connect(directional_backend(), opts).unwrap();
    let resumed = noise_sweep(&mut bridge, &ds, &spec, Some(&ckpt)).unwrap();
    write_trials_jsonl(&dir.path().join("resumed.jsonl"), &resumed).unwrap();
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    Resume {
        records: resumed.len(),
        expected_records: spec.expected_records(ds.len()),
        completed_before_fault,
        byte_identical: read("clean.jsonl") == read("resumed.jsonl"),
    }
}
