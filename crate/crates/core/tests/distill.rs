mod common;

use common::{brute_weighted_median, gradient_error, random_instance};
use geounc::uncertainty::{fixed_source, train, Target, TrainConfig, UncertaintyGrid, U_MAX};
use geounc::{Aabb, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gradient_matches_finite_differences() {
    let worst = (0..10).map(gradient_error).fold(0.0, f64::max);
    assert!(worst < 1e-4, "relative error {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn gradient_check_on_random_instances(seed in any::<u64>()) {
        prop_assert!(gradient_error(seed) < 1e-4);
    }

    #[test]
    fn training_keeps_values_in_range(seed in any::<u64>(), lr in 1e-3f64..0.5) {
        let (mut g, batch) = random_instance(seed);
        let cfg = TrainConfig { lr, ..TrainConfig::default() };
        let mut opt = cfg.optimizer(g.values.len());
        train(&mut g, &mut opt, 30, 0, fixed_source(batch, 16, seed));
        prop_assert!(g.values.iter().all(|v| (0.0..=U_MAX).contains(v)));
    }
}

fn fit(grid: &mut UncertaintyGrid, targets: Vec<Target>, steps: usize, seed: u64) {
    // a smaller step than the default keeps the sign-noise jitter of the L1
    // subgradient well inside the tolerance
    let cfg = TrainConfig { lr: 2e-3, ..TrainConfig::default() };
    let mut opt = cfg.optimizer(grid.values.len());
    train(grid, &mut opt, steps, 0, fixed_source(targets, 256, seed));
}

#[test]
fn converges_to_the_region_median() {
    // every cell sees the multiset {0.1, 0.1, 0.1, 0.9} at random points
    let bbox = Aabb::cube(Vec3::zeros(), 1.0);
    let mut grid = UncertaintyGrid::new([3, 3, 3], bbox, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut targets = Vec::new();
    for cell in 0..8 {
        let lo = Vec3::new(-1.0 + (cell & 1) as f64, -1.0 + ((cell >> 1) & 1) as f64, -1.0 + ((cell >> 2) & 1) as f64);
        for _ in 0..50 {
            for value in [0.1, 0.1, 0.1, 0.9] {
                let point = lo + Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                targets.push(Target { point, value });
            }
        }
    }
    let oracle = brute_weighted_median(&[(0.1, 3.0), (0.9, 1.0)], 0.0, 2.0, 20_000);
    assert!((oracle - 0.1).abs() < 1e-3);
    fit(&mut grid, targets, 3000, 1);
    for v in &grid.values {
        assert!((v - oracle).abs() < 0.05, "node {v} vs median {oracle}");
    }
}

#[test]
fn converges_to_weighted_medians_at_nodes() {
    let bbox = Aabb::cube(Vec3::zeros(), 1.0);
    let mut grid = UncertaintyGrid::new([4, 4, 4], bbox, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut targets = Vec::new();
    let mut oracles = Vec::new();
    for idx in 0..grid.values.len() {
        let [i, j, k] = grid.spec.coords(idx);
        let point = grid.spec.node_position(i, j, k);
        // an odd total multiplicity keeps the weighted median unique
        let labels: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(0.0..U_MAX), rng.random_range(1..4) as f64)).collect();
        let labels = if labels.iter().map(|l| l.1).sum::<f64>() as usize % 2 == 0 {
            let mut l = labels;
            l[0].1 += 1.0;
            l
        } else {
            labels
        };
        for &(value, w) in &labels {
            for _ in 0..(w as usize * 10) {
                targets.push(Target { point, value });
            }
        }
        oracles.push(brute_weighted_median(&labels, 0.0, U_MAX, 20_000));
    }
    fit(&mut grid, targets, 4000, 2);
    for (v, o) in grid.values.iter().zip(&oracles) {
        assert!((v - o).abs() < 0.05, "node {v} vs weighted median {o}");
    }
}
