//! The taxis POMDP.
//!
//! Hidden state is the agent's pose, physiology and salience. Actions are
//! linear and angular accelerations integrated by semi-implicit Euler.
//! Observations are fold-change (FCD) signals or the raw log-density gradient,
//! and the reward is the directional derivative of `log γ(z; β)` along the
//! realized velocity, evaluated at the post-step pose so that a noiseless
//! `fcd_scalar` observation equals the reward exactly.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::interoception::{NeuromodRule, PhysioState};
use crate::landscape::{Landscape, Polarity, SalienceVector};

pub const MAX_DT_S: f64 = 0.1;
pub const DEFAULT_ANGULAR_DAMPING_PER_S: f64 = 2.0;
pub const DEFAULT_EPISODE_LENGTH_S: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    FcdScalar,
    FcdPerChannel,
    FullGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub mode: ObservationMode,
    pub values: Vec<f64>,
    pub noise_std: f64,
}

impl Observation {
    /// The summed FCD signal: the scalar itself, or the per-channel sum.
    pub fn fcd(&self) -> Option<f64> {
        match self.mode {
            ObservationMode::FcdScalar => self.values.first().copied(),
            ObservationMode::FcdPerChannel => Some(self.values.iter().sum()),
            ObservationMode::FullGradient => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    /// units/s²
    pub linear_accel: f64,
    /// rad/s²
    pub angular_accel: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        linear_accel: 0.0,
        angular_accel: 0.0,
    };

    pub fn new(linear_accel: f64, angular_accel: f64) -> Self {
        Action {
            linear_accel,
            angular_accel,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear_accel.is_finite() && self.angular_accel.is_finite()
    }
}

/// How β is produced each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SalienceSpec {
    /// β from physiological deficits with gain `gain`.
    Physiological { gain: f64 },
    /// Constant β.
    Fixed { weights: BTreeMap<String, f64> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    /// Uniform over bounds when absent.
    #[serde(default)]
    pub position: Option<Vec2>,
    /// Uniform over (-π, π] when absent.
    #[serde(default)]
    pub heading_rad: Option<f64>,
    #[serde(default)]
    pub speed_units_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    pub dt_s: f64,
    pub v_max_units_per_s: f64,
    pub max_linear_accel_units_per_s2: f64,
    pub max_angular_accel_rad_per_s2: f64,
    #[serde(default = "default_damping")]
    pub angular_damping_per_s: f64,
    #[serde(default)]
    pub noise_std: f64,
    pub observation_mode: ObservationMode,
    #[serde(default = "default_episode_length")]
    pub episode_length_s: f64,
    #[serde(default)]
    pub start: StartPose,
}

fn default_damping() -> f64 {
    DEFAULT_ANGULAR_DAMPING_PER_S
}

fn default_episode_length() -> f64 {
    DEFAULT_EPISODE_LENGTH_S
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let cfg = |p: &str, m: String| Err(Error::config(format!("environment.{p}"), m));
        if !(self.dt_s.is_finite() && self.dt_s > 0.0 && self.dt_s <= MAX_DT_S) {
            return cfg("dt_s", format!("must lie in (0, {MAX_DT_S}], got {}", self.dt_s));
        }
        for (name, v) in [
            ("v_max_units_per_s", self.v_max_units_per_s),
            ("max_linear_accel_units_per_s2", self.max_linear_accel_units_per_s2),
            ("max_angular_accel_rad_per_s2", self.max_angular_accel_rad_per_s2),
            ("episode_length_s", self.episode_length_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return cfg(name, format!("must be finite and > 0, got {v}"));
            }
        }
        for (name, v) in [
            ("angular_damping_per_s", self.angular_damping_per_s),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return cfg(name, format!("must be finite and >= 0, got {v}"));
            }
        }
        let s = &self.start;
        if !(s.speed_units_per_s.is_finite() && s.speed_units_per_s >= 0.0) {
            return cfg("start.speed_units_per_s", "must be finite and >= 0".into());
        }
        if s.heading_rad.is_some_and(|h| !h.is_finite()) {
            return cfg("start.heading_rad", "must be finite".into());
        }
        Ok(())
    }

    /// Number of steps in one episode.
    pub fn episode_steps(&self) -> usize {
        (self.episode_length_s / self.dt_s - 1e-9).ceil() as usize
    }
}

/// What the agent can sense about its own body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proprioception {
    pub speed: f64,
    pub heading: f64,
    pub angular_velocity: f64,
    pub dt: f64,
    pub v_max: f64,
    pub max_linear_accel: f64,
    pub max_angular_accel: f64,
}

impl Proprioception {
    /// `a` limited to the body's acceleration bounds.
    pub fn clamp(&self, a: Action) -> Action {
        Action::new(
            a.linear_accel.clamp(-self.max_linear_accel, self.max_linear_accel),
            a.angular_accel.clamp(-self.max_angular_accel, self.max_angular_accel),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub z: Vec2,
    /// radians, in (-π, π]
    pub heading: f64,
    pub speed: f64,
    /// Internal angular velocity integrator, rad/s.
    pub angular_velocity: f64,
    pub physio: PhysioState,
    pub beta: SalienceVector,
    pub t: f64,
    pub rng: ChaCha8Rng,
}

impl EnvState {
    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.heading) * self.speed
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub state_snapshot: Option<EnvState>,
    pub done: bool,
}

/// Density the agent's food sensors respond to: the summed density of the
/// attractant channels that currently carry salience.
pub fn sensed_density(landscape: &Landscape, z: Vec2, beta: &SalienceVector) -> f64 {
    landscape
        .channels()
        .iter()
        .filter(|c| landscape.channel_polarity(c) == Some(Polarity::Attractant) && beta.get(c) > 0.0)
        .map(|c| landscape.channel_density(c, z))
        .sum()
}

/// Emit an observation of `state` under `mode`. Noise draws come from the
/// state's generator and only happen when `noise_std > 0`.
pub fn observe(
    state: &mut EnvState,
    landscape: &Landscape,
    mode: ObservationMode,
    noise_std: f64,
) -> Result<Observation> {
    let v = state.velocity();
    let mut values = match mode {
        ObservationMode::FcdScalar => vec![landscape.directional_derivative(state.z, v, &state.beta)?],
        ObservationMode::FcdPerChannel => landscape
            .channels()
            .iter()
            .map(|c| Ok(landscape.channel_gradient(c, state.z, &state.beta)?.dot(v)))
            .collect::<Result<Vec<_>>>()?,
        ObservationMode::FullGradient => {
            let g = landscape.gradient(state.z, &state.beta)?;
            vec![g.x, g.y]
        }
    };
    if noise_std > 0.0 {
        for x in &mut values {
            let eps: f64 = state.rng.sample(StandardNormal);
            *x += noise_std * eps;
        }
    }
    Ok(Observation {
        mode,
        values,
        noise_std,
    })
}

/// One environment instance. Owned by a single rollout.
#[derive(Debug, Clone)]
pub struct Environment {
    landscape: Arc<Landscape>,
    params: EnvParams,
    salience: SalienceSpec,
    neuromod: NeuromodRule,
    initial_physio: PhysioState,
    state: EnvState,
    /// Capture a state snapshot in every step result.
    pub debug_snapshots: bool,
}

impl Environment {
    pub fn new(
        landscape: Arc<Landscape>,
        params: EnvParams,
        salience: SalienceSpec,
        neuromod: NeuromodRule,
        initial_physio: PhysioState,
    ) -> Result<Self> {
        params.validate()?;
        neuromod.validate()?;
        if let SalienceSpec::Physiological { gain } = salience {
            if !(gain.is_finite() && gain > 0.0) {
                return Err(Error::config("salience.gain", format!("must be > 0, got {gain}")));
            }
        }
        let beta = compute_beta(&salience, &initial_physio, &landscape)?;
        let state = EnvState {
            z: landscape.bounds().midpoint_grid(1, 1)[0],
            heading: 0.0,
            speed: 0.0,
            angular_velocity: 0.0,
            physio: initial_physio.clone(),
            beta,
            t: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        Ok(Environment {
            landscape,
            params,
            salience,
            neuromod,
            initial_physio,
            state,
            debug_snapshots: false,
        })
    }

    pub fn landscape(&self) -> &Landscape {
        &self.landscape
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn proprioception(&self) -> Proprioception {
        Proprioception {
            speed: self.state.speed,
            heading: self.state.heading,
            angular_velocity: self.state.angular_velocity,
            dt: self.params.dt_s,
            v_max: self.params.v_max_units_per_s,
            max_linear_accel: self.params.max_linear_accel_units_per_s2,
            max_angular_accel: self.params.max_angular_accel_rad_per_s2,
        }
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.params.episode_length_s - 1e-9 * self.params.dt_s
    }

    /// Place the agent at the configured start pose (or a uniform random one)
    /// and return the initial observation. Identical seeds give identical states.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bounds = *self.landscape.bounds();
        let start = &self.params.start;
        let z = match start.position {
            Some(p) => {
                if !p.is_finite() || !bounds.contains(p) {
                    return Err(Error::config(
                        "environment.start.position",
                        format!("({}, {}) lies outside the landscape bounds", p.x, p.y),
                    ));
                }
                p
            }
            None => Vec2::new(
                rng.random_range(bounds.x_min..=bounds.x_max),
                rng.random_range(bounds.y_min..=bounds.y_max),
            ),
        };
        let heading = match start.heading_rad {
            Some(h) => wrap_angle(h),
            None => wrap_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
        };
        let physio = self.initial_physio.clone();
        let beta = compute_beta(&self.salience, &physio, &self.landscape)?;
        self.state = EnvState {
            z,
            heading,
            speed: start.speed_units_per_s.min(self.params.v_max_units_per_s),
            angular_velocity: 0.0,
            physio,
            beta,
            t: 0.0,
            rng,
        };
        observe(
            &mut self.state,
            &self.landscape,
            self.params.observation_mode,
            self.params.noise_std,
        )
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        self.step_with_dt(action, self.params.dt_s)
    }

    pub fn step_with_dt(&mut self, action: Action, dt: f64) -> Result<StepResult> {
        if !(dt.is_finite() && dt > 0.0 && dt <= MAX_DT_S) {
            return Err(Error::domain(format!("dt must lie in (0, {MAX_DT_S}], got {dt}")));
        }
        if !action.is_finite() {
            return Err(Error::domain(format!(
                "non-finite action ({}, {})",
                action.linear_accel, action.angular_accel
            )));
        }
        let p = &self.params;
        let lin = action
            .linear_accel
            .clamp(-p.max_linear_accel_units_per_s2, p.max_linear_accel_units_per_s2);
        let ang = action
            .angular_accel
            .clamp(-p.max_angular_accel_rad_per_s2, p.max_angular_accel_rad_per_s2);

        let s = &mut self.state;
        s.speed = (s.speed + lin * dt).clamp(0.0, p.v_max_units_per_s);
        s.angular_velocity += ang * dt;
        s.heading = wrap_angle(s.heading + s.angular_velocity * dt);
        s.angular_velocity *= (-p.angular_damping_per_s * dt).exp();

        let (z, flips) = self
            .landscape
            .bounds()
            .reflect(s.z + Vec2::from_angle(s.heading) * (s.speed * dt));
        s.z = z;
        if flips.flip_x {
            s.heading = wrap_angle(std::f64::consts::PI - s.heading);
        }
        if flips.flip_y {
            s.heading = wrap_angle(-s.heading);
        }
        if flips.flip_x != flips.flip_y {
            s.angular_velocity = -s.angular_velocity;
        }

        s.physio = s.physio.update_physio(&self.landscape, s.z, dt)?;
        s.beta = compute_beta(&self.salience, &s.physio, &self.landscape)?;
        let rho = sensed_density(&self.landscape, s.z, &s.beta);
        s.physio = s.physio.update_neuromodulators(&self.neuromod, rho, dt)?;
        s.t += dt;

        let reward = self.landscape.directional_derivative(s.z, s.velocity(), &s.beta)?;
        let observation = observe(s, &self.landscape, p.observation_mode, p.noise_std)?;
        let done = self.is_done();
        Ok(StepResult {
            observation,
            reward,
            state_snapshot: self.debug_snapshots.then(|| self.state.clone()),
            done,
        })
    }
}

fn compute_beta(spec: &SalienceSpec, physio: &PhysioState, landscape: &Landscape) -> Result<SalienceVector> {
    match spec {
        SalienceSpec::Physiological { gain } => physio.salience(landscape, *gain),
        SalienceSpec::Fixed { weights } => {
            let mut beta = SalienceVector::new();
            for (c, w) in weights {
                beta.set(c, *w)?;
            }
            Ok(beta)
        }
    }
}
