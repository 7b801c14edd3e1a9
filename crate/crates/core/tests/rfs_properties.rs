mod common;

use proptest::prelude::*;
use rand::Rng;

use common::oracles::rfs_distance_ratio;
use regionsense::metrics::{irfs, rfs};

fn grid() -> impl Iterator<Item = (f64, f64)> {
    (0..=100).flat_map(|i| (0..=100).map(move |j| (i as f64 / 100.0, j as f64 / 100.0)))
}

#[test]
fn matches_the_distance_to_diagonal_construction() {
    let mut rng = common::rng(99);
    let random = (0..10_000).map(|_| (rng.random::<f64>(), rng.random::<f64>()));
    let points: Vec<(f64, f64)> = random.chain(grid()).collect();
    for (f, b) in points {
        let got = rfs(f, b);
        let want = rfs_distance_ratio(f, b);
        assert!((got - want).abs() < 1e-12, "({f}, {b}): {got} vs {want}");
    }
}

#[test]
fn hand_checked_points_from_both_triangles() {
    assert!((rfs(0.2f64, 0.6) - 0.5).abs() < 1e-12);
    assert!((rfs(0.7f64, 0.9) - 0.5).abs() < 1e-12);
    assert!((rfs(0.6f64, 0.2) + 0.5).abs() < 1e-12);
    assert_eq!(rfs(0.0f64, 1.0), 1.0);
    assert_eq!(rfs(1.0f64, 0.0), -1.0);
    assert_eq!(rfs(0.0f64, 0.0), 0.0);
    assert_eq!(rfs(1.0f64, 1.0), 0.0);
}

#[test]
fn exhaustive_grid_properties() {
    for (f, b) in grid() {
        for v in [rfs(f, b), irfs(f, b)] {
            assert!((-1.0..=1.0).contains(&v), "({f}, {b}) -> {v}");
        }
        assert!((rfs(f, b) + rfs(b, f)).abs() < 1e-15, "antisymmetry at ({f}, {b})");
        if f == b {
            assert_eq!(rfs(f, b), 0.0);
        } else {
            let mean = (f + b) / 2.0;
            if mean > 0.0 && mean < 1.0 {
                assert_eq!(rfs(f, b).signum(), (b - f).signum(), "sign at ({f}, {b})");
            }
        }
        assert_eq!(irfs(f, b), rfs(f, b));
    }
}

#[test]
fn single_precision_agrees_with_double() {
    for (f, b) in grid() {
        let single = rfs(f as f32, b as f32) as f64;
        assert!((single - rfs(f, b)).abs() < 1e-5, "({f}, {b})");
    }
}

proptest! {
    #[test]
    fn bounded_and_antisymmetric(f in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let v = rfs(f, b);
        prop_assert!((-1.0..=1.0).contains(&v));
        prop_assert!((v + rfs(b, f)).abs() < 1e-15);
        prop_assert!((v - rfs_distance_ratio(f, b)).abs() < 1e-12);
    }

    #[test]
    fn widening_the_gap_at_fixed_mean_never_lowers_rfs(mean in 0.05f64..0.95, d1 in 0.0f64..0.05, extra in 0.0f64..0.05) {
        let d2 = d1 + extra;
        prop_assert!(rfs(mean - d2, mean + d2) >= rfs(mean - d1, mean + d1) - 1e-15);
    }
}
