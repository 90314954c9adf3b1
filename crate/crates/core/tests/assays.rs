use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};
use taxis_core::assays::{
    chemotaxis_index, empirical_histogram, run_lengths, stationary_tv_distance, step_length_tail_from_lengths,
    tail_fit, target_cell_probabilities, total_variation,
};
use taxis_core::landscape::{DensityComponent, Landscape, Polarity, SalienceVector};
use taxis_core::trajectory::TrajectoryRecord;
use taxis_core::{Bounds, Vec2};

/// Inverse-CDF draws with density `∝ ℓ^(−α)` above `l_min`.
fn pareto(n: usize, alpha: f64, l_min: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| l_min * (1.0 - rng.random::<f64>()).powf(-1.0 / (alpha - 1.0)))
        .collect()
}

fn record(t: f64, x: f64, y: f64, speed: f64) -> TrajectoryRecord {
    TrajectoryRecord {
        t,
        z: Vec2::new(x, y),
        heading: 0.0,
        speed,
        reward: 0.0,
        obs: vec![0.0],
        beta: vec![1.0],
        dopamine: 0.0,
        serotonin: 0.0,
    }
}

#[test]
fn pareto_exponent_recovered_at_thousand_samples() {
    for seed in 0..20 {
        let fit = tail_fit(&pareto(1000, 2.0, 1.0, seed), Some(1.0));
        assert!((1.8..=2.2).contains(&fit.alpha), "seed {seed}: {}", fit.alpha);
    }
}

#[test]
fn pareto_exponent_is_consistent() {
    // mean absolute error over replicates must shrink with n
    let err = |n: usize| {
        (0..40)
            .map(|s| (tail_fit(&pareto(n, 2.0, 1.0, 1000 + s), Some(1.0)).alpha - 2.0).abs())
            .sum::<f64>()
            / 40.0
    };
    let (e2, e3, e4) = (err(100), err(1000), err(10_000));
    assert!(e2 > e3 && e3 > e4, "{e2} {e3} {e4}");
    assert!(e4 < 0.02);
}

#[test]
fn heavy_and_light_tails_are_told_apart() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let exp = Exp::new(1.0).unwrap();
    for _ in 0..20 {
        let light: Vec<f64> = (0..500).map(|_| rng.sample(exp)).collect();
        assert!(tail_fit(&light, None).llr < 0.0);
    }
    let heavy = pareto(500, 2.0, 0.5, 9);
    let rep = step_length_tail_from_lengths(&heavy).unwrap();
    assert!(rep.get("llr").unwrap() > 0.0 && rep.pass);
}

#[test]
fn equal_lengths_are_flagged_degenerate() {
    let rep = step_length_tail_from_lengths(&[1.5; 80]).unwrap();
    assert!(!rep.pass);
    assert_eq!(rep.get("degenerate"), Some(1.0));
    assert!(step_length_tail_from_lengths(&[1.0; 49]).is_err());
}

#[test]
fn run_lengths_drop_censored_ends() {
    let speeds = [1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 0.0, 3.0];
    let recs: Vec<_> = speeds.iter().enumerate().map(|(i, &s)| record(i as f64 * 0.5, 0.0, 0.0, s)).collect();
    assert_eq!(run_lengths(&recs, 0.5), vec![2.0, 0.5]);
}

fn two_gaussian() -> (Landscape, SalienceVector) {
    let l = Landscape::new(
        vec![
            DensityComponent::gaussian(Vec2::new(-1.0, 0.0), 2f64.sqrt(), "food", Polarity::Attractant),
            DensityComponent::gaussian(Vec2::new(1.0, 0.5), 2f64.sqrt(), "water", Polarity::Attractant),
        ],
        Bounds::square(8.0).unwrap(),
    )
    .unwrap();
    (l, SalienceVector::from_pairs([("food", 1.0), ("water", 1.0)]).unwrap())
}

#[test]
fn direct_samples_match_target() {
    let (l, beta) = two_gaussian();
    // the product of the two experts is N((0, 0.25), I)
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (nx, ny) = (Normal::new(0.0, 1.0).unwrap(), Normal::new(0.25, 1.0).unwrap());
    let b = *l.bounds();
    let points: Vec<Vec2> = std::iter::repeat_with(|| Vec2::new(rng.sample(nx), rng.sample(ny)))
        .filter(|z| b.contains(*z))
        .take(1_000_000)
        .collect();
    let rep = stationary_tv_distance(&points, &l, &beta, (32, 32), 0, 0.03).unwrap();
    assert!(rep.pass, "{}", rep.table());
}

#[test]
fn uniform_samples_are_far_from_peaked_target() {
    let l = Landscape::new(
        vec![DensityComponent::gaussian(Vec2::ZERO, 0.5, "food", Polarity::Attractant)],
        Bounds::square(5.0).unwrap(),
    )
    .unwrap();
    let beta = SalienceVector::from_pairs([("food", 1.0)]).unwrap();
    let target = target_cell_probabilities(&l, &beta, 32, 32).unwrap();
    let uniform = vec![1.0 / 1024.0; 1024];
    assert!(total_variation(&uniform, &target) > 0.3);
    assert_eq!(total_variation(&target, &target), 0.0);
}

#[test]
fn stationary_assay_needs_enough_samples() {
    let (l, beta) = two_gaussian();
    let few = vec![Vec2::ZERO; 150_000];
    assert!(stationary_tv_distance(&few, &l, &beta, (32, 32), 100_000, 0.05).is_err());
}

fn trajectory() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.01..1.0f64, -5.0..5.0f64, -5.0..5.0f64), 2..60)
}

proptest! {
    #[test]
    fn chemotaxis_index_bounded_and_time_scale_free(steps in trajectory(), scale in 0.01..100.0f64, radius in 0.1..6.0f64) {
        let build = |k: f64| {
            let mut t = 0.0;
            steps.iter().map(|&(dt, x, y)| { t += dt * k; record(t, x, y, 1.0) }).collect::<Vec<_>>()
        };
        let (a, b) = (build(1.0), build(scale));
        let ci_a = chemotaxis_index(&[&a], Vec2::ZERO, radius, 0.5).unwrap().get("ci").unwrap();
        let ci_b = chemotaxis_index(&[&b], Vec2::ZERO, radius, 0.5).unwrap().get("ci").unwrap();
        prop_assert!((-1.0..=1.0).contains(&ci_a));
        prop_assert!((ci_a - ci_b).abs() < 1e-9);
    }

    #[test]
    fn total_variation_in_unit_interval(xs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..200), ys in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..200)) {
        let b = Bounds::square(5.0).unwrap();
        let h = |v: &Vec<(f64, f64)>| empirical_histogram(v.iter().map(|&(x, y)| Vec2::new(x, y)), &b, 8, 8);
        let (p, q) = (h(&xs), h(&ys));
        let tv = total_variation(&p, &q);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&tv));
        prop_assert_eq!(total_variation(&p, &p), 0.0);
    }
}
