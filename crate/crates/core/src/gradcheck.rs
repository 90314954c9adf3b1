//! Analytic-versus-numerical checks of the landscape calculus.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Experiment;
use crate::environment::{Action, Environment, SalienceSpec, StartPose};
use crate::error::Result;
use crate::geometry::{Bounds, Vec2};
use crate::inverse::ParametricEnergy;
use crate::landscape::{Landscape, SalienceVector};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub n_points: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Reward must equal the analytic directional derivative to this.
    pub identity_tolerance: f64,
    /// Successive halvings for the convergence-order check.
    pub dts: Vec<f64>,
    pub ratio_range: (f64, f64),
    pub seed: u64,
    /// Negative-control hook: perturbs the analytic gradient so the check
    /// must fail.
    pub corrupt_gradient: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            n_points: 100,
            h: 1e-5,
            tolerance: 1e-6,
            identity_tolerance: 1e-9,
            dts: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
            ratio_range: (1.8, 2.2),
            seed: 0,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub dt: f64,
    pub steps: usize,
    /// Mean |Δlog γ / dt − ∇log γ · v| along the rollout.
    pub mean_abs_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub n_points: usize,
    pub tolerance: f64,
    pub landscape_max_rel_err: f64,
    pub rbf_max_rel_err: f64,
    pub fcd_identity_max_abs_err: f64,
    pub dt_sweep: Vec<SweepPoint>,
    pub error_ratios: Vec<f64>,
    pub checks: BTreeMap<String, bool>,
    pub pass: bool,
}

fn rel_err(analytic: Vec2, numeric: Vec2) -> f64 {
    (analytic - numeric).norm() / analytic.norm().max(numeric.norm()).max(1e-12)
}

fn central_difference(f: impl Fn(Vec2) -> f64, z: Vec2, h: f64) -> Vec2 {
    let dx = Vec2::new(h, 0.0);
    let dy = Vec2::new(0.0, h);
    Vec2::new((f(z + dx) - f(z - dx)) / (2.0 * h), (f(z + dy) - f(z - dy)) / (2.0 * h))
}

fn random_point(rng: &mut ChaCha8Rng, b: &Bounds, margin: f64) -> Vec2 {
    Vec2::new(
        rng.random_range(b.x_min + margin..b.x_max - margin),
        rng.random_range(b.y_min + margin..b.y_max - margin),
    )
}

/// Largest relative error of `∇log γ` against central differences at random
/// points and random salience.
pub fn landscape_gradient_error(landscape: &Landscape, opts: &GradcheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let margin = 10.0 * opts.h;
    let mut worst: f64 = 0.0;
    for _ in 0..opts.n_points {
        let mut beta = SalienceVector::new();
        for c in landscape.channels() {
            beta.set(c, rng.random_range(0.5..2.0))?;
        }
        let z = random_point(&mut rng, landscape.bounds(), margin);
        let mut analytic = landscape.gradient(z, &beta)?;
        if opts.corrupt_gradient {
            analytic = analytic * (1.0 + 1e-4);
        }
        let numeric = central_difference(|p| landscape.log_density(p, &beta).unwrap_or(f64::NAN), z, opts.h);
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(worst)
}

/// Same check for a random-weight RBF field over `bounds`.
pub fn rbf_gradient_error(bounds: Bounds, opts: &GradcheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);
    let mut model = ParametricEnergy::new(bounds, (8, 8), None)?;
    model.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    let mut worst: f64 = 0.0;
    for _ in 0..opts.n_points {
        let z = random_point(&mut rng, &bounds, 10.0 * opts.h);
        let mut analytic = model.energy_gradient(z);
        if opts.corrupt_gradient {
            analytic = analytic * (1.0 + 1e-4);
        }
        let numeric = central_difference(|p| model.energy(p), z, opts.h);
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(worst)
}

/// Straight constant-speed rollout across the interior, with unit salience
/// on every channel. Returns the mean finite-difference error and the
/// largest deviation of the reward from the analytic directional derivative.
pub fn fcd_rollout(exp: &Experiment, dt: f64) -> Result<(SweepPoint, f64)> {
    let b = *exp.landscape.bounds();
    let from = Vec2::new(b.x_min + 0.15 * b.width(), b.y_min + 0.35 * b.height());
    let to = Vec2::new(b.x_min + 0.85 * b.width(), b.y_min + 0.6 * b.height());
    let path = to - from;
    let mut params = exp.config.environment.clone();
    let speed = params.v_max_units_per_s.min(path.norm());
    let duration = path.norm() / speed;
    let steps = (duration / dt).round() as usize;
    params.dt_s = dt;
    params.noise_std = 0.0;
    params.episode_length_s = steps as f64 * dt;
    params.start = StartPose {
        position: Some(from),
        heading_rad: Some(path.angle()),
        speed_units_per_s: speed,
    };
    let weights = exp.landscape.channels().iter().map(|c| (c.clone(), 1.0)).collect();
    let mut env = Environment::new(
        exp.landscape.clone(),
        params,
        SalienceSpec::Fixed { weights },
        exp.config.neuromodulators,
        exp.physio.clone(),
    )?;
    env.reset(0)?;
    let landscape = env.landscape().clone();
    let (mut sum, mut n, mut identity): (f64, usize, f64) = (0.0, 0, 0.0);
    for _ in 0..steps {
        let prev = env.state().z;
        let step = env.step(Action::ZERO)?;
        let s = env.state();
        let v = s.velocity();
        identity = identity.max((step.reward - landscape.directional_derivative(s.z, v, &s.beta)?).abs());
        if ((s.z - prev) - v * dt).norm() > 1e-9 {
            // reflected off a wall
            continue;
        }
        let fd = (landscape.log_density(s.z, &s.beta)? - landscape.log_density(prev, &s.beta)?) / dt;
        sum += (fd - step.reward).abs();
        n += 1;
    }
    Ok((
        SweepPoint {
            dt,
            steps,
            mean_abs_err: sum / n.max(1) as f64,
        },
        identity,
    ))
}

pub fn gradcheck(exp: &Experiment, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let landscape_err = landscape_gradient_error(&exp.landscape, opts)?;
    let rbf_err = rbf_gradient_error(*exp.landscape.bounds(), opts)?;
    let mut sweep = Vec::new();
    let mut identity: f64 = 0.0;
    for &dt in &opts.dts {
        let (point, id) = fcd_rollout(exp, dt)?;
        identity = identity.max(id);
        sweep.push(point);
    }
    let ratios: Vec<f64> = sweep
        .windows(2)
        .map(|w| w[0].mean_abs_err / w[1].mean_abs_err)
        .collect();
    let (lo, hi) = opts.ratio_range;
    let mut checks = BTreeMap::new();
    checks.insert("landscape_gradient".to_string(), landscape_err < opts.tolerance);
    checks.insert("rbf_gradient".to_string(), rbf_err < opts.tolerance);
    checks.insert("fcd_identity".to_string(), identity < opts.identity_tolerance);
    checks.insert(
        "fcd_first_order".to_string(),
        !ratios.is_empty() && ratios.iter().all(|r| (lo..=hi).contains(r)),
    );
    Ok(GradcheckReport {
        n_points: opts.n_points,
        tolerance: opts.tolerance,
        landscape_max_rel_err: landscape_err,
        rbf_max_rel_err: rbf_err,
        fcd_identity_max_abs_err: identity,
        dt_sweep: sweep,
        error_ratios: ratios,
        pass: checks.values().all(|&ok| ok),
        checks,
    })
}
