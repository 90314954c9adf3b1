use proptest::prelude::*;
use taxis_core::landscape::{DensityComponent, Landscape, Polarity, SalienceVector};
use taxis_core::{Bounds, Vec2};

fn two_channel() -> Landscape {
    Landscape::new(
        vec![
            DensityComponent::gaussian(Vec2::new(-1.0, 0.5), 1.3, "food", Polarity::Attractant),
            DensityComponent::gaussian(Vec2::new(2.0, -1.0), 0.8, "water", Polarity::Attractant),
            DensityComponent::cone(Vec2::new(0.0, 3.0), 2.0, "heat", Polarity::Repellent),
        ],
        Bounds::square(5.0).unwrap(),
    )
    .unwrap()
}

fn beta(f: f64, w: f64, h: f64) -> SalienceVector {
    SalienceVector::from_pairs([("food", f), ("water", w), ("heat", h)]).unwrap()
}

// Brute-force evaluation of Σ β_c s_i ℓ_i written out term by term.
fn log_density_by_hand(z: Vec2, b: (f64, f64, f64)) -> f64 {
    let food = -((z.x + 1.0).powi(2) + (z.y - 0.5).powi(2)) / (2.0 * 1.3 * 1.3);
    let water = -((z.x - 2.0).powi(2) + (z.y + 1.0).powi(2)) / (2.0 * 0.8 * 0.8);
    let heat = -(z.x.powi(2) + (z.y - 3.0).powi(2)).sqrt() / 2.0;
    b.0 * food + b.1 * water - b.2 * heat
}

#[test]
fn log_density_matches_hand_evaluation() {
    let l = two_channel();
    for (z, b) in [
        (Vec2::new(0.3, -0.2), (1.0, 0.5, 2.0)),
        (Vec2::new(-4.0, 4.5), (0.0, 3.0, 0.1)),
        (Vec2::new(2.0, -1.0), (2.5, 0.0, 0.0)),
    ] {
        let got = l.log_density(z, &beta(b.0, b.1, b.2)).unwrap();
        assert!((got - log_density_by_hand(z, b)).abs() < 1e-12);
    }
}

#[test]
fn unit_gaussian_values() {
    let l = Landscape::new(
        vec![DensityComponent::gaussian(Vec2::ZERO, 1.0, "food", Polarity::Attractant)],
        Bounds::square(3.0).unwrap(),
    )
    .unwrap();
    let b = SalienceVector::from_pairs([("food", 1.0)]).unwrap();
    let z = Vec2::new(1.0, 0.0);
    assert!((l.log_density(z, &b).unwrap() + 0.5).abs() < 1e-15);
    assert_eq!(l.gradient(z, &b).unwrap(), Vec2::new(-1.0, 0.0));
    let dd = l.directional_derivative(z, Vec2::new(-2.0, 0.0), &b).unwrap();
    assert!((dd - 2.0).abs() < 1e-15);
}

#[test]
fn gradient_matches_central_differences_at_100_points() {
    let l = two_channel();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        // deterministic scatter, kept away from the cone apex
        let t = i as f64;
        let z = Vec2::new(4.5 * (1.7 * t).sin(), 4.5 * (2.3 * t + 0.4).cos());
        if (z - Vec2::new(0.0, 3.0)).norm() < 0.1 {
            continue;
        }
        let b = beta(0.5 + (t * 0.37).fract(), 0.5 + (t * 0.61).fract() * 1.5, 0.5 + (t * 0.13).fract());
        let g = l.gradient(z, &b).unwrap();
        let f = |p: Vec2| l.log_density(p, &b).unwrap();
        let fd = Vec2::new(
            (f(z + Vec2::new(h, 0.0)) - f(z - Vec2::new(h, 0.0))) / (2.0 * h),
            (f(z + Vec2::new(0.0, h)) - f(z - Vec2::new(0.0, h))) / (2.0 * h),
        );
        worst = worst.max((g - fd).norm() / g.norm().max(fd.norm()));
    }
    assert!(worst < 1e-6, "max relative error {worst:e}");
}

#[test]
fn modes_have_vanishing_gradient_and_reward() {
    let l = two_channel();
    let b = beta(0.0, 1.0, 0.0);
    let mode = Vec2::new(2.0, -1.0);
    assert!(l.gradient(mode, &b).unwrap().norm() < 1e-6);
    for k in 0..16 {
        let v = Vec2::from_angle(k as f64 * std::f64::consts::PI / 8.0) * 1.5;
        assert!(l.directional_derivative(mode, v, &b).unwrap().abs() < 1e-6 * 1.5);
    }
}

fn point() -> impl Strategy<Value = Vec2> {
    (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y)| Vec2::new(x, y))
}

fn weights() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0..4.0f64, 0.0..4.0f64, 0.0..4.0f64)
}

proptest! {
    #[test]
    fn log_density_is_linear_in_salience(z in point(), b1 in weights(), b2 in weights(), a in 0.0..3.0f64, c in 0.0..3.0f64) {
        let l = two_channel();
        let mixed = beta(a * b1.0 + c * b2.0, a * b1.1 + c * b2.1, a * b1.2 + c * b2.2);
        let lhs = l.log_density(z, &mixed).unwrap();
        let rhs = a * l.log_density(z, &beta(b1.0, b1.1, b1.2)).unwrap()
            + c * l.log_density(z, &beta(b2.0, b2.1, b2.2)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn directional_derivative_scales_with_velocity(z in point(), b in weights(), ux in -3.0..3.0f64, uy in -3.0..3.0f64, a in -5.0..5.0f64) {
        let l = two_channel();
        let s = beta(b.0, b.1, b.2);
        let u = Vec2::new(ux, uy);
        let one = l.directional_derivative(z, u, &s).unwrap();
        let scaled = l.directional_derivative(z, u * a, &s).unwrap();
        prop_assert!((scaled - a * one).abs() <= 1e-12 * scaled.abs().max(1.0));
    }

    #[test]
    fn energy_is_negative_log_density(z in point(), b in weights()) {
        let l = two_channel();
        let s = beta(b.0, b.1, b.2);
        prop_assert_eq!(l.energy(z, &s).unwrap(), -l.log_density(z, &s).unwrap());
    }

    #[test]
    fn channel_gradients_sum_to_total(z in point(), b in weights()) {
        let l = two_channel();
        let s = beta(b.0, b.1, b.2);
        let total = l.gradient(z, &s).unwrap();
        let parts = ["food", "water", "heat"]
            .iter()
            .map(|c| l.channel_gradient(c, z, &s).unwrap())
            .fold(Vec2::ZERO, |a, g| a + g);
        prop_assert!((total - parts).norm() <= 1e-12 * total.norm().max(1.0));
    }
}
