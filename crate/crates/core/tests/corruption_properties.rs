mod common;

use rand::Rng;

use regionsense::corruption::{
    apply_region_noise, attribute_ablate, compose_swap, gaussian_noise, gray_ablate, l2_normalize_noise, trial_noise,
    NoiseKind, Region, SwapRegion,
};
use regionsense::dataset::{synth_dataset, AttributeId, Coding, SynthSpec};
use regionsense::tensor::{BinaryMask, Shape};

const FIXTURES: usize = 1000;

fn targeted(region: Region, inside: bool) -> bool {
    match region {
        Region::Foreground => inside,
        Region::Background => !inside,
        _ => true,
    }
}

#[test]
fn region_noise_invariants_on_random_fixtures() {
    let mut rng = common::rng(1);
    for case in 0..FIXTURES {
        let (h, w) = (rng.random_range(8..16), rng.random_range(8..16));
        let shape = Shape::new(h, w);
        let x = common::random_image(&mut rng, h, w);
        let m = common::random_mask(&mut rng, shape);
        let sigma = rng.random_range(0.0..0.9);
        let seed = rng.random::<u64>();
        let n = gaussian_noise::<f64>(shape, sigma, seed).unwrap();
        assert_eq!(n, gaussian_noise::<f64>(shape, sigma, seed).unwrap());
        for region in [Region::Foreground, Region::Background, Region::Full] {
            let y = apply_region_noise(&x, &m, &n, region).unwrap();
            for p in 0..h * w {
                let hit = targeted(region, m.data()[p]);
                for c in 0..3 {
                    let i = p * 3 + c;
                    let (xv, yv) = (x.data()[i], y.data()[i]);
                    assert!((0.0..=1.0).contains(&yv), "case {case}: {yv} escapes [0, 1]");
                    if hit {
                        assert_eq!(yv, (xv + n.data()[i]).clamp(0.0, 1.0));
                    } else {
                        assert_eq!(yv.to_bits(), xv.to_bits(), "case {case}: untargeted pixel changed");
                    }
                }
            }
        }
    }
}

#[test]
fn l2_targets_are_met_per_region() {
    let mut rng = common::rng(2);
    for case in 0..FIXTURES {
        let shape = Shape::new(rng.random_range(2..12), rng.random_range(2..12));
        let mut m = common::random_mask(&mut rng, shape);
        if m.count() == shape.pixels() {
            m = BinaryMask::from_fn(shape, |y, x| (y, x) != (0, 0));
        }
        let n = gaussian_noise::<f64>(shape, 1.0, rng.random()).unwrap();
        let target = rng.random_range(1.0..200.0);
        for region in [Region::Foreground, Region::Background, Region::Full] {
            let scaled = l2_normalize_noise(&n, &m, region, target).unwrap();
            let mut sq = 0.0;
            for (p, &inside) in m.data().iter().enumerate() {
                for c in 0..3 {
                    let v = scaled.data()[p * 3 + c];
                    if targeted(region, inside) {
                        sq += v * v;
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
            assert!((sq.sqrt() - target).abs() < 1e-6, "case {case} {region}: {}", sq.sqrt());
        }
    }
}

#[test]
fn trial_noise_is_keyed_by_every_component() {
    let shape = Shape::new(6, 6);
    let kind = NoiseKind::LinfGaussian;
    let base = trial_noise::<f32>(shape, kind, 0.2, 5, "s1", 2, 3).unwrap();
    assert_eq!(base, trial_noise::<f32>(shape, kind, 0.2, 5, "s1", 2, 3).unwrap());
    for other in [
        trial_noise::<f32>(shape, kind, 0.2, 6, "s1", 2, 3).unwrap(),
        trial_noise::<f32>(shape, kind, 0.2, 5, "s2", 2, 3).unwrap(),
        trial_noise::<f32>(shape, kind, 0.2, 5, "s1", 1, 3).unwrap(),
        trial_noise::<f32>(shape, kind, 0.2, 5, "s1", 2, 4).unwrap(),
    ] {
        assert_ne!(base, other);
    }
}

#[test]
fn gray_ablation_of_checkerboard_touches_exactly_the_mask() {
    let mut rng = common::rng(3);
    let x = common::random_image(&mut rng, 8, 8);
    let m = BinaryMask::from_fn(Shape::new(8, 8), |y, x| (y + x) % 2 == 0);
    let y = gray_ablate(&x, &m, Region::Foreground).unwrap();
    for p in 0..64 {
        for c in 0..3 {
            let i = p * 3 + c;
            if m.data()[p] {
                assert_eq!(y.data()[i], 0.5);
            } else {
                assert_eq!(y.data()[i], x.data()[i]);
            }
        }
    }
}

#[test]
fn attribute_ablation_and_swaps_on_synthetic_samples() {
    let ds = synth_dataset::<f64>(&SynthSpec::new(24, 32, Coding::ForegroundCoded, 4, 11)).unwrap();
    let text = AttributeId::from_name("text").unwrap();
    let metallic = AttributeId::from_name("metallic").unwrap();
    let with_marker = ds.iter().find(|s| s.has_attribute(text)).unwrap();
    let out = attribute_ablate(with_marker, text).unwrap();
    let mask = with_marker.attribute_mask(text).unwrap();
    for p in 0..mask.data().len() {
        for c in 0..3 {
            let i = p * 3 + c;
            if mask.data()[p] {
                assert_eq!(out.data()[i], 0.5);
            } else {
                assert_eq!(out.data()[i], with_marker.image.data()[i]);
            }
        }
    }
    let metal = ds.iter().find(|s| s.has_attribute(metallic)).unwrap();
    assert!(attribute_ablate(metal, metallic).is_err());
    let without = ds.iter().find(|s| !s.has_attribute(text)).unwrap();
    assert!(attribute_ablate(without, text).is_err());

    // Identity paste and pixel-diff support of a foreign paste.
    let a = &ds.samples()[0];
    assert_eq!(&compose_swap(a, a, SwapRegion::Foreground).unwrap(), &a.image);
    let donor = with_marker;
    let target = ds.iter().find(|s| s.class_label != donor.class_label).unwrap();
    let swapped = compose_swap(target, donor, SwapRegion::Attribute(text)).unwrap();
    for p in 0..mask.data().len() {
        let src = if mask.data()[p] { &donor.image } else { &target.image };
        assert_eq!(&swapped.data()[p * 3..p * 3 + 3], &src.data()[p * 3..p * 3 + 3]);
    }
}
