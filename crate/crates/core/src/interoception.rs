//! Internal physiology, need-driven salience and neuromodulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::landscape::{Landscape, Polarity, SalienceVector};

/// Neuromodulator low-pass time constant, seconds.
pub const NEUROMOD_TIME_CONSTANT_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysioVariable {
    pub channel: String,
    /// Satiety in [0, 1]; 1 is fully sated.
    pub level: f64,
    pub setpoint: f64,
    /// Depletion per second.
    pub decay_rate: f64,
    /// Replenishment per second per unit of local channel density.
    pub intake_gain: f64,
}

impl PhysioVariable {
    pub fn new(channel: &str, level: f64, setpoint: f64, decay_rate: f64, intake_gain: f64) -> Result<Self> {
        let v = PhysioVariable {
            channel: channel.to_string(),
            level,
            setpoint,
            decay_rate,
            intake_gain,
        };
        v.validate()?;
        Ok(v)
    }

    fn validate(&self) -> Result<()> {
        let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !unit(self.level) || !unit(self.setpoint) {
            return Err(Error::domain(format!(
                "{}: level and setpoint must lie in [0, 1]",
                self.channel
            )));
        }
        if !(self.decay_rate.is_finite() && self.decay_rate >= 0.0)
            || !(self.intake_gain.is_finite() && self.intake_gain >= 0.0)
        {
            return Err(Error::domain(format!(
                "{}: decay_rate and intake_gain must be finite and >= 0",
                self.channel
            )));
        }
        Ok(())
    }

    pub fn deficit(&self) -> f64 {
        (self.setpoint - self.level).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuromodRule {
    pub dopamine_gain: f64,
    pub serotonin_gain: f64,
    /// Density above which serotonin starts to rise.
    pub serotonin_threshold: f64,
}

impl NeuromodRule {
    /// Neuromodulators held at zero.
    pub const OFF: NeuromodRule = NeuromodRule {
        dopamine_gain: 0.0,
        serotonin_gain: 0.0,
        serotonin_threshold: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dopamine_gain", self.dopamine_gain),
            ("serotonin_gain", self.serotonin_gain),
            ("serotonin_threshold", self.serotonin_threshold),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysioState {
    pub variables: Vec<PhysioVariable>,
    /// Dimensionless gain, ≥ 0.
    pub dopamine: f64,
    /// Quiescence drive in [0, 1].
    pub serotonin: f64,
}

impl PhysioState {
    pub fn new(variables: Vec<PhysioVariable>) -> Result<Self> {
        for (i, v) in variables.iter().enumerate() {
            v.validate()?;
            if variables[..i].iter().any(|w| w.channel == v.channel) {
                return Err(Error::domain(format!("duplicate physiology channel {:?}", v.channel)));
            }
        }
        Ok(PhysioState {
            variables,
            dopamine: 0.0,
            serotonin: 0.0,
        })
    }

    pub fn variable(&self, channel: &str) -> Option<&PhysioVariable> {
        self.variables.iter().find(|v| v.channel == channel)
    }

    /// Deplete and replenish every variable for one step of length `dt` at `z`.
    /// Attractant channels replenish with local density; repellent channels harm.
    pub fn update_physio(&self, landscape: &Landscape, z: Vec2, dt: f64) -> Result<PhysioState> {
        check_dt(dt)?;
        let mut next = self.clone();
        for v in &mut next.variables {
            let rho = landscape.channel_density(&v.channel, z);
            let sign = match landscape.channel_polarity(&v.channel) {
                Some(Polarity::Repellent) => -1.0,
                _ => 1.0,
            };
            let level = v.level - v.decay_rate * dt + sign * v.intake_gain * rho * dt;
            v.level = level.clamp(0.0, 1.0);
        }
        Ok(next)
    }

    /// `β_c = k · max(0, setpoint_c − level_c)` for attractant channels, `β_c = k`
    /// for repellent channels of `landscape`.
    pub fn salience(&self, landscape: &Landscape, k: f64) -> Result<SalienceVector> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::domain(format!("salience gain must be > 0, got {k}")));
        }
        let mut beta = SalienceVector::new();
        for v in &self.variables {
            beta.set(&v.channel, k * v.deficit())?;
        }
        for c in landscape.channels() {
            if landscape.channel_polarity(c) == Some(Polarity::Repellent) {
                beta.set(c, k)?;
            }
        }
        Ok(beta)
    }

    /// First-order low-pass update (τ = 1 s, exact discretization) of dopamine
    /// toward `dopamine_gain·ρ` and serotonin toward
    /// `serotonin_gain·max(0, ρ − threshold)`, serotonin clamped to [0, 1].
    pub fn update_neuromodulators(&self, rule: &NeuromodRule, local_density: f64, dt: f64) -> Result<PhysioState> {
        check_dt(dt)?;
        if !(local_density.is_finite() && local_density >= 0.0) {
            return Err(Error::domain(format!(
                "local density must be finite and >= 0, got {local_density}"
            )));
        }
        let keep = (-dt / NEUROMOD_TIME_CONSTANT_S).exp();
        let da_target = rule.dopamine_gain * local_density;
        let ht_target = (rule.serotonin_gain * (local_density - rule.serotonin_threshold).max(0.0)).min(1.0);
        let mut next = self.clone();
        next.dopamine = (da_target + (self.dopamine - da_target) * keep).max(0.0);
        next.serotonin = (ht_target + (self.serotonin - ht_target) * keep).clamp(0.0, 1.0);
        Ok(next)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("dt must be > 0, got {dt}")))
    }
}
