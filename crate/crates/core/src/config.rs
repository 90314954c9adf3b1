//! Experiment configuration: a strict JSON document with units in key names.
//!
//! ```json
//! {
//!   "landscape": {"bounds": {"x_min": -5, "x_max": 5, "y_min": -5, "y_max": 5},
//!                 "components": [{"kind": "gaussian", "center": [0, 0], "scale": 1.5,
//!                                 "channel": "food", "polarity": "attractant"}]},
//!   "salience": {"mode": "fixed", "weights": {"food": 1.0}},
//!   "environment": {"dt_s": 0.05, "v_max_units_per_s": 2, ...},
//!   "policy": {"kind": "run_and_tumble", ...},
//!   "rollout": {"n_episodes": 10, "base_seed": 0}
//! }
//! ```
//!
//! Unknown keys are rejected at every level. Validation failures carry the
//! dotted key path, which [`locate_line`] maps back to a line of the source.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::controllers::{Policy, PolicySpec};
use crate::environment::{EnvParams, Environment, SalienceSpec};
use crate::error::{Error, Result};
use crate::interoception::{NeuromodRule, PhysioState, PhysioVariable};
use crate::landscape::{Landscape, LandscapeSpec, Polarity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysioVariableSpec {
    pub channel: String,
    pub initial_level: f64,
    #[serde(default = "one")]
    pub setpoint: f64,
    #[serde(default)]
    pub decay_rate_per_s: f64,
    #[serde(default)]
    pub intake_gain_per_s: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysiologySpec {
    #[serde(default)]
    pub variables: Vec<PhysioVariableSpec>,
    #[serde(default)]
    pub initial_dopamine: f64,
    #[serde(default)]
    pub initial_serotonin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSpec {
    #[serde(default = "one_episode")]
    pub n_episodes: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Explicit per-episode seeds; overrides `base_seed` when present.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

fn one_episode() -> usize {
    1
}

impl Default for RolloutSpec {
    fn default() -> Self {
        RolloutSpec {
            n_episodes: 1,
            base_seed: 0,
            seeds: None,
        }
    }
}

impl RolloutSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.n_episodes as u64).map(|i| self.base_seed + i).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub directory: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<TrajectoryFormat>,
    /// Speed below which the agent counts as dwelling; default 20% of the
    /// policy's cruise speed.
    #[serde(default)]
    pub dwell_speed_threshold_units_per_s: Option<f64>,
}

fn default_formats() -> Vec<TrajectoryFormat> {
    vec![TrajectoryFormat::Csv]
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            directory: None,
            formats: default_formats(),
            dwell_speed_threshold_units_per_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub landscape: LandscapeSpec,
    #[serde(default)]
    pub physiology: PhysiologySpec,
    pub salience: SalienceSpec,
    #[serde(default = "neuromod_off")]
    pub neuromodulators: NeuromodRule,
    pub environment: EnvParams,
    pub policy: PolicySpec,
    #[serde(default)]
    pub rollout: RolloutSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn neuromod_off() -> NeuromodRule {
    NeuromodRule::OFF
}

/// A validated configuration with its derived engine objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub landscape: Arc<Landscape>,
    pub physio: PhysioState,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Check every invariant and build the engine objects. Nothing is
    /// simulated until this succeeds.
    pub fn validate(&self) -> Result<Experiment> {
        let landscape = Landscape::new(self.landscape.components.clone(), self.landscape.bounds)
            .map_err(|e| Error::config("landscape", strip_domain(e)))?;
        let channels: BTreeSet<&str> = landscape.channels().iter().map(String::as_str).collect();

        let mut vars = Vec::new();
        for (i, v) in self.physiology.variables.iter().enumerate() {
            let path = format!("physiology.variables[{i}]");
            if !channels.contains(v.channel.as_str()) {
                return Err(Error::config(
                    format!("{path}.channel"),
                    format!("channel {:?} is not defined by any landscape component", v.channel),
                ));
            }
            vars.push(
                PhysioVariable::new(&v.channel, v.initial_level, v.setpoint, v.decay_rate_per_s, v.intake_gain_per_s)
                    .map_err(|e| Error::config(path.clone(), strip_domain(e)))?,
            );
        }
        let mut physio =
            PhysioState::new(vars).map_err(|e| Error::config("physiology.variables", strip_domain(e)))?;
        let p = &self.physiology;
        if !(p.initial_dopamine.is_finite() && p.initial_dopamine >= 0.0) {
            return Err(Error::config("physiology.initial_dopamine", "must be finite and >= 0"));
        }
        if !(p.initial_serotonin.is_finite() && (0.0..=1.0).contains(&p.initial_serotonin)) {
            return Err(Error::config("physiology.initial_serotonin", "must lie in [0, 1]"));
        }
        physio.dopamine = p.initial_dopamine;
        physio.serotonin = p.initial_serotonin;

        match &self.salience {
            SalienceSpec::Physiological { gain } => {
                if !(gain.is_finite() && *gain > 0.0) {
                    return Err(Error::config("salience.gain", format!("must be > 0, got {gain}")));
                }
                for c in landscape.channels() {
                    if landscape.channel_polarity(c) == Some(Polarity::Attractant) && physio.variable(c).is_none() {
                        return Err(Error::config(
                            "salience.mode",
                            format!("attractant channel {c:?} has no physiology variable to drive its salience"),
                        ));
                    }
                }
            }
            SalienceSpec::Fixed { weights } => {
                for (c, w) in weights {
                    if !channels.contains(c.as_str()) {
                        return Err(Error::config(
                            "salience.weights",
                            format!("channel {c:?} is not defined by any landscape component"),
                        ));
                    }
                    if !(w.is_finite() && *w >= 0.0) {
                        return Err(Error::config("salience.weights", format!("{c}: weight must be >= 0")));
                    }
                }
            }
        }

        self.neuromodulators
            .validate()
            .map_err(|e| Error::config("neuromodulators", strip_domain(e)))?;
        self.environment.validate()?;
        if let Some(z) = self.environment.start.position {
            if !landscape.bounds().contains(z) {
                return Err(Error::config(
                    "environment.start.position",
                    format!("({}, {}) lies outside the landscape bounds", z.x, z.y),
                ));
            }
        }

        let policy = self.policy.build()?;
        if !policy.accepts(self.environment.observation_mode) {
            return Err(Error::config(
                "environment.observation_mode",
                format!(
                    "policy {} cannot consume {:?} observations",
                    policy.kind(),
                    self.environment.observation_mode
                ),
            ));
        }

        if self.rollout.n_episodes == 0 {
            return Err(Error::config("rollout.n_episodes", "must be >= 1"));
        }
        if let Some(s) = &self.rollout.seeds {
            if s.len() != self.rollout.n_episodes {
                return Err(Error::config(
                    "rollout.seeds",
                    format!("{} seeds given for {} episodes", s.len(), self.rollout.n_episodes),
                ));
            }
        }
        if let Some(th) = self.output.dwell_speed_threshold_units_per_s {
            if !(th.is_finite() && th > 0.0) {
                return Err(Error::config("output.dwell_speed_threshold_units_per_s", "must be > 0"));
            }
        }

        Ok(Experiment {
            config: self.clone(),
            landscape: Arc::new(landscape),
            physio,
        })
    }
}

fn strip_domain(e: Error) -> String {
    match e {
        Error::Domain(m) => m,
        other => other.to_string(),
    }
}

impl Experiment {
    pub fn environment(&self) -> Result<Environment> {
        Environment::new(
            self.landscape.clone(),
            self.config.environment.clone(),
            self.config.salience.clone(),
            self.config.neuromodulators,
            self.physio.clone(),
        )
    }

    pub fn policy(&self) -> Result<Box<dyn Policy>> {
        self.config.policy.build()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.config.rollout.seeds()
    }

    pub fn dwell_speed_threshold(&self) -> f64 {
        self.config
            .output
            .dwell_speed_threshold_units_per_s
            .unwrap_or_else(|| 0.2 * self.config.policy.cruise_speed(self.config.environment.v_max_units_per_s))
    }
}

impl PolicySpec {
    /// Nominal cruise speed; policies without one report `v_max`.
    pub fn cruise_speed(&self, v_max: f64) -> f64 {
        match self {
            PolicySpec::RunAndTumble(p) => p.run_speed_units_per_s,
            PolicySpec::Klinotaxis(p) => p.cruise_speed_units_per_s,
            PolicySpec::Modulated(p) => p.base.cruise_speed(v_max),
            PolicySpec::LangevinOracle(_) | PolicySpec::Scripted(_) => v_max,
        }
    }
}

/// Apply `key.path=value` overrides to a JSON tree. Numeric path segments
/// index arrays. Values parse as JSON, falling back to a plain string.
pub fn apply_overrides(root: &mut Value, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (path, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::config(ov.clone(), "override must look like key.path=value"))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut *root;
        let segments: Vec<&str> = path.split('.').collect();
        for (i, seg) in segments.iter().enumerate() {
            let last = i + 1 == segments.len();
            node = match node {
                Value::Object(map) => {
                    if last {
                        map.insert(seg.to_string(), value.clone());
                        break;
                    }
                    map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
                }
                Value::Array(items) => {
                    let idx: usize = seg
                        .parse()
                        .map_err(|_| Error::config(path, format!("{seg:?} is not an array index")))?;
                    let len = items.len();
                    let slot = items
                        .get_mut(idx)
                        .ok_or_else(|| Error::config(path, format!("index {idx} out of range ({len})")))?;
                    if last {
                        *slot = value.clone();
                        break;
                    }
                    slot
                }
                _ => return Err(Error::config(path, format!("cannot descend into {seg:?}"))),
            };
        }
    }
    Ok(())
}

/// Best-effort 1-based line of the key named by a dotted path such as
/// `environment.start.position` or `physiology.variables[1].channel`.
pub fn locate_line(source: &str, path: &str) -> Option<usize> {
    let mut offset = 0;
    let mut found = None;
    for seg in path.split('.') {
        let key = seg.split('[').next().unwrap_or(seg);
        if key.is_empty() {
            continue;
        }
        let needle = format!("\"{key}\"");
        let pos = source[offset..].find(&needle)? + offset;
        found = Some(pos);
        offset = pos + needle.len();
    }
    found.map(|pos| source[..pos].matches('\n').count() + 1)
}

/// Read, override, parse and validate a config file. Failures are reported as
/// [`Error::Parse`] anchored to the offending line where one can be found.
pub fn load_experiment(path: &Path, overrides: &[String]) -> Result<Experiment> {
    let source = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let anchored = |line: usize, message: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        message,
    };
    let config: ExperimentConfig = if overrides.is_empty() {
        serde_json::from_str(&source).map_err(|e| anchored(e.line(), e.to_string()))?
    } else {
        let mut tree: Value = serde_json::from_str(&source).map_err(|e| anchored(e.line(), e.to_string()))?;
        apply_overrides(&mut tree, overrides)?;
        serde_json::from_value(tree).map_err(|e| anchored(0, format!("after overrides: {e}")))?
    };
    config.validate().map_err(|e| match e {
        Error::Config { path: key, message } => {
            anchored(locate_line(&source, &key).unwrap_or(0), format!("{key}: {message}"))
        }
        other => other,
    })
}
