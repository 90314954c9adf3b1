//! Taxis controllers behind a single [`Policy`] interface.
//!
//! * run-and-tumble: tumble probability per step `p₀·dt·logistic(−k·r)`
//! * klinotaxis: weathervane steering on the temporal change of the FCD signal
//! * Langevin oracle: consumes the full gradient and steers the velocity onto
//!   `∇ log γ + √2·η/√dt`, realizing Euler–Maruyama Langevin steps
//! * modulated: wraps run-and-tumble or klinotaxis, scaling cruise speed with
//!   dopamine and braking to quiescence on serotonin

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::environment::{Action, Observation, ObservationMode, Proprioception};
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::interoception::PhysioState;

pub type PolicyRng = ChaCha8Rng;

pub trait Policy: Send {
    fn kind(&self) -> &'static str;

    fn accepts(&self, mode: ObservationMode) -> bool;

    fn act(
        &mut self,
        obs: &Observation,
        body: &Proprioception,
        physio: &PhysioState,
        rng: &mut PolicyRng,
    ) -> Result<Action>;

    /// Forget per-episode memory.
    fn reset(&mut self) {}
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn fcd_signal(obs: &Observation, who: &str) -> Result<f64> {
    match obs.mode {
        ObservationMode::FcdScalar | ObservationMode::FcdPerChannel => obs
            .fcd()
            .ok_or_else(|| Error::Contract(format!("{who}: empty observation"))),
        ObservationMode::FullGradient => Err(Error::Contract(format!(
            "{who} requires an fcd observation, got full_gradient"
        ))),
    }
}

/// Acceleration that moves `speed` to `target` with time constant `tau`
/// (one step when `tau <= dt`).
fn approach(speed: f64, target: f64, tau: f64, dt: f64) -> f64 {
    (target - speed) / tau.max(dt)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("policy.{name}"), format!("must be finite and > 0, got {v}")))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("policy.{name}"), format!("must be finite and >= 0, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunAndTumbleParams {
    pub run_speed_units_per_s: f64,
    /// p₀: tumble rate at zero FCD is p₀/2.
    pub base_tumble_rate_per_s: f64,
    /// k in `logistic(−k·r)`, seconds.
    pub sensitivity_s: f64,
    /// α_max: tumble angular acceleration is uniform in [−α_max, α_max].
    pub tumble_angular_accel_rad_per_s2: f64,
    #[serde(default)]
    pub speed_time_constant_s: f64,
}

impl RunAndTumbleParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("run_speed_units_per_s", self.run_speed_units_per_s)?;
        check_positive("base_tumble_rate_per_s", self.base_tumble_rate_per_s)?;
        check_nonneg("sensitivity_s", self.sensitivity_s)?;
        check_nonneg("tumble_angular_accel_rad_per_s2", self.tumble_angular_accel_rad_per_s2)?;
        check_nonneg("speed_time_constant_s", self.speed_time_constant_s)
    }
}

#[derive(Debug, Clone)]
pub struct RunAndTumble {
    params: RunAndTumbleParams,
}

impl RunAndTumble {
    pub fn new(params: RunAndTumbleParams) -> Result<Self> {
        params.validate()?;
        Ok(RunAndTumble { params })
    }

    /// Per-step tumble probability for FCD signal `r`.
    pub fn tumble_probability(&self, r: f64, dt: f64) -> f64 {
        (self.params.base_tumble_rate_per_s * dt * logistic(-self.params.sensitivity_s * r)).min(1.0)
    }

    fn act_with_cruise(&mut self, r: f64, body: &Proprioception, cruise: f64, rng: &mut PolicyRng) -> Action {
        let p = self.tumble_probability(r, body.dt);
        if rng.random::<f64>() < p {
            let a = self.params.tumble_angular_accel_rad_per_s2;
            let angular = if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
            Action::new(-body.speed / body.dt, angular)
        } else {
            // runs are straight: cancel any turn left over from a tumble
            Action::new(
                approach(body.speed, cruise, self.params.speed_time_constant_s, body.dt),
                -body.angular_velocity / body.dt,
            )
        }
    }
}

impl Policy for RunAndTumble {
    fn kind(&self) -> &'static str {
        "run_and_tumble"
    }

    fn accepts(&self, mode: ObservationMode) -> bool {
        mode != ObservationMode::FullGradient
    }

    fn act(&mut self, obs: &Observation, body: &Proprioception, _: &PhysioState, rng: &mut PolicyRng) -> Result<Action> {
        let r = fcd_signal(obs, "run_and_tumble")?;
        Ok(body.clamp(self.act_with_cruise(r, body, self.params.run_speed_units_per_s, rng)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlinotaxisParams {
    pub cruise_speed_units_per_s: f64,
    /// g in `g·Δr/dt·sign(turn)`.
    pub steering_gain: f64,
    /// Standard deviation of the exploratory angular acceleration, rad/s².
    pub exploration_noise_rad_per_s2: f64,
    #[serde(default)]
    pub speed_time_constant_s: f64,
    /// Time constant of a running mean of `Δr/dt` that is subtracted before
    /// steering, removing the slow drift caused by translation. 0 disables.
    #[serde(default)]
    pub adaptation_time_constant_s: f64,
}

impl KlinotaxisParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("cruise_speed_units_per_s", self.cruise_speed_units_per_s)?;
        check_nonneg("steering_gain", self.steering_gain)?;
        check_nonneg("exploration_noise_rad_per_s2", self.exploration_noise_rad_per_s2)?;
        check_nonneg("speed_time_constant_s", self.speed_time_constant_s)?;
        check_nonneg("adaptation_time_constant_s", self.adaptation_time_constant_s)
    }
}

#[derive(Debug, Clone)]
pub struct Klinotaxis {
    params: KlinotaxisParams,
    previous_r: Option<f64>,
    last_turn: f64,
    mean_rate: f64,
}

impl Klinotaxis {
    pub fn new(params: KlinotaxisParams) -> Result<Self> {
        params.validate()?;
        Ok(Klinotaxis {
            params,
            previous_r: None,
            last_turn: 1.0,
            mean_rate: 0.0,
        })
    }

    /// Deterministic steering term for a change from `previous` to `r`
    /// while turning in direction `turn` (±1).
    pub fn steering(&self, previous: f64, r: f64, turn: f64, dt: f64) -> f64 {
        self.params.steering_gain * (r - previous) / dt * turn
    }

    fn act_with_cruise(&mut self, r: f64, body: &Proprioception, cruise: f64, rng: &mut PolicyRng) -> Action {
        let linear = approach(body.speed, cruise, self.params.speed_time_constant_s, body.dt);
        if body.angular_velocity != 0.0 {
            self.last_turn = body.angular_velocity.signum();
        }
        let Some(previous) = self.previous_r.replace(r) else {
            return Action::new(linear, 0.0);
        };
        let mut baseline = 0.0;
        let tau = self.params.adaptation_time_constant_s;
        if tau > 0.0 {
            let rate = (r - previous) / body.dt;
            self.mean_rate += (rate - self.mean_rate) * (1.0 - (-body.dt / tau).exp());
            baseline = self.mean_rate * body.dt;
        }
        let noise: f64 = rng.sample(StandardNormal);
        let angular = self.steering(previous + baseline, r, self.last_turn, body.dt)
            + self.params.exploration_noise_rad_per_s2 * noise;
        Action::new(linear, angular)
    }
}

impl Policy for Klinotaxis {
    fn kind(&self) -> &'static str {
        "klinotaxis"
    }

    fn accepts(&self, mode: ObservationMode) -> bool {
        mode != ObservationMode::FullGradient
    }

    fn act(&mut self, obs: &Observation, body: &Proprioception, _: &PhysioState, rng: &mut PolicyRng) -> Result<Action> {
        let r = fcd_signal(obs, "klinotaxis")?;
        Ok(body.clamp(self.act_with_cruise(r, body, self.params.cruise_speed_units_per_s, rng)))
    }

    fn reset(&mut self) {
        self.previous_r = None;
        self.last_turn = 1.0;
        self.mean_rate = 0.0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinParams {
    #[serde(default = "yes")]
    pub noise: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone)]
pub struct LangevinOracle {
    params: LangevinParams,
}

impl LangevinOracle {
    pub fn new(params: LangevinParams) -> Self {
        LangevinOracle { params }
    }

    /// Target velocity `∇ log γ + √2·η/√dt`.
    pub fn target_velocity(&self, grad: (f64, f64), dt: f64, rng: &mut PolicyRng) -> (f64, f64) {
        if !self.params.noise {
            return grad;
        }
        let k = (2.0 / dt).sqrt();
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        (grad.0 + k * ex, grad.1 + k * ey)
    }
}

impl Policy for LangevinOracle {
    fn kind(&self) -> &'static str {
        "langevin_oracle"
    }

    fn accepts(&self, mode: ObservationMode) -> bool {
        mode == ObservationMode::FullGradient
    }

    fn act(&mut self, obs: &Observation, body: &Proprioception, _: &PhysioState, rng: &mut PolicyRng) -> Result<Action> {
        if obs.mode != ObservationMode::FullGradient || obs.values.len() != 2 {
            return Err(Error::Contract(
                "langevin_oracle requires a full_gradient observation".into(),
            ));
        }
        let dt = body.dt;
        let (vx, vy) = self.target_velocity((obs.values[0], obs.values[1]), dt, rng);
        let target_speed = vx.hypot(vy);
        let linear = (target_speed - body.speed) / dt;
        // the environment integrates ω += α·dt, then heading += ω·dt
        let turn = if target_speed > 0.0 {
            wrap_angle(vy.atan2(vx) - body.heading)
        } else {
            0.0
        };
        let angular = (turn / dt - body.angular_velocity) / dt;
        Ok(body.clamp(Action::new(linear, angular)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DopamineEffect {
    /// Cruise speed divided by (1 + dopamine): crawl in dense patches.
    #[default]
    Slows,
    /// Cruise speed multiplied by (1 + dopamine).
    Invigorates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulatedParams {
    pub base: Box<PolicySpec>,
    /// Serotonin level above which the agent brakes into quiescence.
    pub quiescence_threshold: f64,
    #[serde(default)]
    pub dopamine_effect: DopamineEffect,
}

enum Base {
    RunAndTumble(RunAndTumble),
    Klinotaxis(Klinotaxis),
}

pub struct Modulated {
    base: Base,
    quiescence_threshold: f64,
    dopamine_effect: DopamineEffect,
}

impl Modulated {
    pub fn new(params: ModulatedParams) -> Result<Self> {
        check_nonneg("quiescence_threshold", params.quiescence_threshold)?;
        let base = match *params.base {
            PolicySpec::RunAndTumble(p) => Base::RunAndTumble(RunAndTumble::new(p)?),
            PolicySpec::Klinotaxis(p) => Base::Klinotaxis(Klinotaxis::new(p)?),
            _ => {
                return Err(Error::config(
                    "policy.base.kind",
                    "modulated policy wraps run_and_tumble or klinotaxis only",
                ))
            }
        };
        Ok(Modulated {
            base,
            quiescence_threshold: params.quiescence_threshold,
            dopamine_effect: params.dopamine_effect,
        })
    }

    fn base_cruise(&self) -> f64 {
        match &self.base {
            Base::RunAndTumble(p) => p.params.run_speed_units_per_s,
            Base::Klinotaxis(p) => p.params.cruise_speed_units_per_s,
        }
    }

    /// Cruise speed under the current dopamine level.
    pub fn cruise_speed(&self, dopamine: f64) -> f64 {
        match self.dopamine_effect {
            DopamineEffect::Slows => self.base_cruise() / (1.0 + dopamine),
            DopamineEffect::Invigorates => self.base_cruise() * (1.0 + dopamine),
        }
    }
}

impl Policy for Modulated {
    fn kind(&self) -> &'static str {
        "modulated"
    }

    fn accepts(&self, mode: ObservationMode) -> bool {
        mode != ObservationMode::FullGradient
    }

    fn act(&mut self, obs: &Observation, body: &Proprioception, physio: &PhysioState, rng: &mut PolicyRng) -> Result<Action> {
        let r = fcd_signal(obs, "modulated")?;
        let cruise = self.cruise_speed(physio.dopamine);
        // base memory keeps tracking the signal while quiescent
        let action = match &mut self.base {
            Base::RunAndTumble(p) => p.act_with_cruise(r, body, cruise, rng),
            Base::Klinotaxis(p) => p.act_with_cruise(r, body, cruise, rng),
        };
        if physio.serotonin > self.quiescence_threshold {
            return Ok(body.clamp(Action::new(-body.speed / body.dt, 0.0)));
        }
        Ok(body.clamp(action))
    }

    fn reset(&mut self) {
        if let Base::Klinotaxis(p) = &mut self.base {
            p.reset();
        }
    }
}

/// Replays a fixed action list, then zero actions.
#[derive(Debug, Clone)]
pub struct Scripted {
    actions: Vec<Action>,
    cursor: usize,
}

impl Scripted {
    pub fn new(actions: Vec<Action>) -> Self {
        Scripted { actions, cursor: 0 }
    }
}

impl Policy for Scripted {
    fn kind(&self) -> &'static str {
        "scripted"
    }

    fn accepts(&self, _: ObservationMode) -> bool {
        true
    }

    fn act(&mut self, _: &Observation, _: &Proprioception, _: &PhysioState, _: &mut PolicyRng) -> Result<Action> {
        let a = self.actions.get(self.cursor).copied().unwrap_or(Action::ZERO);
        self.cursor += 1;
        Ok(a)
    }

    fn reset(&mut self) {
        self.cursor = 0;
    }
}

/// Policy selection as it appears in the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    RunAndTumble(RunAndTumbleParams),
    Klinotaxis(KlinotaxisParams),
    LangevinOracle(LangevinParams),
    Modulated(ModulatedParams),
    Scripted(ScriptedParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedParams {
    /// `[linear_accel, angular_accel]` per step.
    pub actions: Vec<[f64; 2]>,
}

impl PolicySpec {
    pub fn build(&self) -> Result<Box<dyn Policy>> {
        Ok(match self {
            PolicySpec::RunAndTumble(p) => Box::new(RunAndTumble::new(p.clone())?),
            PolicySpec::Klinotaxis(p) => Box::new(Klinotaxis::new(p.clone())?),
            PolicySpec::LangevinOracle(p) => Box::new(LangevinOracle::new(p.clone())),
            PolicySpec::Modulated(p) => Box::new(Modulated::new(p.clone())?),
            PolicySpec::Scripted(p) => {
                if p.actions.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::config("policy.actions", "actions must be finite"));
                }
                Box::new(Scripted::new(p.actions.iter().map(|a| Action::new(a[0], a[1])).collect()))
            }
        })
    }
}
