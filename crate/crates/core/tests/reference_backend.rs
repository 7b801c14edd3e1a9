mod common;

use common::scenarios::{self, gradient_check};
use regionsense::bridge::{train_linear_head, Bridge, BridgeOptions, HeadHyper, ReferenceBackend};
use regionsense::corruption::{gray_ablate, Region};
use regionsense::dataset::{synth_dataset, Coding, Split, SynthSpec};
use regionsense::saliency::saliency_precision;
use regionsense::tensor::{BinaryMask, ImageTensor, Shape};

fn accuracy(bridge: &mut Bridge<f32>, ds: &regionsense::Dataset) -> f64 {
    let images: Vec<&ImageTensor<f32>> = ds.iter().map(|s| &s.image).collect();
    let pred = bridge.predict_probs(&images).unwrap().argmax();
    let hits = ds.iter().zip(&pred).filter(|(s, p)| s.class_label.index() == **p).count();
    hits as f64 / ds.len() as f64
}

#[test]
fn analytic_gradients_match_central_differences() {
    let worst = gradient_check(100, 17);
    assert!(worst < 1e-3, "max relative error {worst}");
}

#[test]
fn batches_are_order_equivariant_and_deterministic() {
    let ds = synth_dataset::<f32>(&SynthSpec::new(12, 64, Coding::ForegroundCoded, 4, 2)).unwrap();
    let mut bridge = Bridge::connect(scenarios::directional_backend(), BridgeOptions::default()).unwrap();
    let forward: Vec<&ImageTensor<f32>> = ds.iter().map(|s| &s.image).collect();
    let reversed: Vec<&ImageTensor<f32>> = forward.iter().rev().copied().collect();
    let a = bridge.predict_probs(&forward).unwrap().probs;
    let mut b = bridge.predict_probs(&reversed).unwrap().probs;
    b.reverse();
    assert_eq!(a, b);
    for p in &a {
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
    let dup = bridge.get_features(&[forward[0], forward[0]]).unwrap();
    assert_eq!(dup.features[0], dup.features[1]);
    assert_eq!(dup.dim, 32);
}

#[test]
fn features_see_the_background_only_when_there_is_one() {
    let ds = synth_dataset::<f32>(&SynthSpec::new(8, 64, Coding::BackgroundCoded, 4, 3)).unwrap();
    let mut bridge = Bridge::connect(scenarios::directional_backend(), BridgeOptions::default()).unwrap();
    let s = &ds.samples()[0];
    let ablated = gray_ablate(&s.image, &s.object_mask, Region::Background).unwrap();
    let f = bridge.get_features(&[&s.image, &ablated]).unwrap();
    assert_ne!(f.features[0], f.features[1]);

    let full = BinaryMask::ones(Shape::new(64, 64));
    let untouched = gray_ablate(&s.image, &full, Region::Background).unwrap();
    let g = bridge.get_features(&[&s.image, &untouched]).unwrap();
    assert_eq!(g.features[0], g.features[1]);
}

#[test]
fn untrained_head_is_near_chance_and_trained_head_is_accurate() {
    for coding in [Coding::ForegroundCoded, Coding::BackgroundCoded] {
        let ds = synth_dataset::<f32>(&SynthSpec::new(200, 64, coding, 4, 7)).unwrap();
        let test = ds.filter_split(Split::Test);
        // A single random head is one draw of a random function; average several.
        let seeds = 0..10u64;
        let before = seeds
            .clone()
            .map(|seed| {
                let b = ReferenceBackend::new(*scenarios::directional_backend().config(), seed).unwrap();
                accuracy(&mut Bridge::connect(b, BridgeOptions::default()).unwrap(), &ds)
            })
            .sum::<f64>()
            / seeds.count() as f64;
        assert!((before - 0.25).abs() <= 0.10, "{coding:?} untrained accuracy {before}");
        let mut bridge = Bridge::connect(scenarios::directional_backend(), BridgeOptions::default()).unwrap();
        let report = train_linear_head(&mut bridge, &ds.filter_split(Split::Train), &scenarios::synthetic_head()).unwrap();
        let after = accuracy(&mut bridge, &test);
        assert!(after > 0.95, "{coding:?} test accuracy {after}");
        let losses = &report.epoch_losses;
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{coding:?} loss rose: {losses:?}");
    }
}

#[test]
fn training_is_reproducible_per_seed() {
    let ds = synth_dataset::<f32>(&SynthSpec::new(40, 64, Coding::ForegroundCoded, 4, 9)).unwrap();
    let hyper = HeadHyper {
        epochs: 3,
        ..HeadHyper::default()
    };
    let heads: Vec<_> = (0..2)
        .map(|_| {
            let mut bridge = Bridge::connect(scenarios::directional_backend(), BridgeOptions::default()).unwrap();
            train_linear_head(&mut bridge, &ds, &hyper).unwrap().head
        })
        .collect();
    assert_eq!(heads[0], heads[1]);
}

#[test]
fn wired_feature_saliency_concentrates_in_its_region() {
    let ds = scenarios::planted_dataset();
    let mut bridge = Bridge::connect(scenarios::wired_backend(), BridgeOptions::default()).unwrap();
    let images: Vec<&ImageTensor<f32>> = ds.iter().take(16).map(|s| &s.image).collect();
    for (&j, (_, region)) in scenarios::PLANTED_FEATURES.iter().zip(scenarios::planted_regions().iter()) {
        for map in bridge.get_feature_saliency(&images, j).unwrap() {
            let share = saliency_precision(&map, region).unwrap();
            assert!(share >= 0.8, "feature {j}: {share} of the mass in its region");
        }
    }
}
