//! Line-delimited JSON stepping protocol for external clients.
//!
//! One request per line on the input, one response per line on the output.
//! Floats in responses are printed with 17 significant digits so that
//! clients recover the exact `f64`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::config::Experiment;
use crate::environment::{Action, Environment, ObservationMode};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum Request {
    Spec {
        version: u32,
    },
    Reset {
        version: u32,
        #[serde(default)]
        seed: Option<u64>,
    },
    Step {
        version: u32,
        action: [f64; 2],
    },
    Close {
        version: u32,
    },
}

impl Request {
    fn version(&self) -> u32 {
        match self {
            Request::Spec { version }
            | Request::Reset { version, .. }
            | Request::Step { version, .. }
            | Request::Close { version } => *version,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Request::Spec { .. } => "spec",
            Request::Reset { .. } => "reset",
            Request::Step { .. } => "step",
            Request::Close { .. } => "close",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Running,
    Done,
    Closed,
}

/// Format a float with 17 significant digits.
pub fn num(v: f64) -> Box<RawValue> {
    let text = if v.is_finite() { format!("{v:.16e}") } else { "null".to_string() };
    RawValue::from_string(text).expect("formatted float is valid JSON")
}

fn nums(vs: &[f64]) -> Vec<Box<RawValue>> {
    vs.iter().copied().map(num).collect()
}

pub struct Session {
    exp: Experiment,
    env: Environment,
    phase: Phase,
}

#[derive(Serialize)]
struct Reply<B: Serialize> {
    version: u32,
    ok: bool,
    op: Option<&'static str>,
    #[serde(flatten)]
    body: B,
}

#[derive(Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Serialize)]
struct ErrorDetail {
    kind: &'static str,
    message: String,
}

#[derive(Serialize)]
struct Empty {}

#[derive(Serialize)]
struct ObservationSpec {
    shape: [usize; 1],
    mode: ObservationMode,
}

#[derive(Serialize)]
struct ActionSpec {
    shape: [usize; 1],
    names: [&'static str; 2],
    low: Vec<Box<RawValue>>,
    high: Vec<Box<RawValue>>,
}

#[derive(Serialize)]
struct SpecBody<'a> {
    observation: ObservationSpec,
    action: ActionSpec,
    bounds: Vec<Box<RawValue>>,
    channels: &'a [String],
    dt_s: Box<RawValue>,
    v_max_units_per_s: Box<RawValue>,
    episode_steps: usize,
}

#[derive(Serialize)]
struct StateBody {
    t: Box<RawValue>,
    z: Vec<Box<RawValue>>,
    heading: Box<RawValue>,
    speed: Box<RawValue>,
    angular_velocity: Box<RawValue>,
    beta: BTreeMap<String, Box<RawValue>>,
    dopamine: Box<RawValue>,
    serotonin: Box<RawValue>,
}

#[derive(Serialize)]
struct ResetBody {
    seed: u64,
    observation: Vec<Box<RawValue>>,
    state: StateBody,
}

#[derive(Serialize)]
struct StepBody {
    observation: Vec<Box<RawValue>>,
    reward: Box<RawValue>,
    done: bool,
    state: StateBody,
}

fn encode<B: Serialize>(op: Option<&'static str>, ok: bool, body: B) -> String {
    serde_json::to_string(&Reply {
        version: PROTOCOL_VERSION,
        ok,
        op,
        body,
    })
    .expect("responses serialize")
}

impl Session {
    pub fn new(exp: Experiment) -> Result<Self> {
        let env = exp.environment()?;
        Ok(Session {
            exp,
            env,
            phase: Phase::Idle,
        })
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    /// Handle one request line and return the response line (no newline).
    pub fn handle(&mut self, line: &str) -> String {
        let (op, result) = match serde_json::from_str::<Request>(line) {
            Ok(req) => (Some(req.name()), self.dispatch(req)),
            Err(e) => (None, Err(Error::Protocol(format!("malformed request: {e}")))),
        };
        result.unwrap_or_else(|e| {
            encode(
                op,
                false,
                ErrorBody {
                    error: ErrorDetail {
                        kind: error_kind(&e),
                        message: e.to_string(),
                    },
                },
            )
        })
    }

    fn dispatch(&mut self, req: Request) -> Result<String> {
        let op = Some(req.name());
        if req.version() != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "unsupported protocol version {}, this server speaks {PROTOCOL_VERSION}",
                req.version()
            )));
        }
        if self.phase == Phase::Closed {
            return Err(Error::Protocol(format!("{} after close", req.name())));
        }
        match req {
            Request::Spec { .. } => Ok(encode(op, true, self.spec())),
            Request::Reset { seed, .. } => {
                let seed = seed.unwrap_or(self.exp.config.rollout.base_seed);
                let obs = self.env.reset(seed)?;
                self.phase = Phase::Running;
                let body = ResetBody {
                    seed,
                    observation: nums(&obs.values),
                    state: self.state(),
                };
                Ok(encode(op, true, body))
            }
            Request::Step { action, .. } => {
                match self.phase {
                    Phase::Idle => return Err(Error::Protocol("step before reset".into())),
                    Phase::Done => return Err(Error::Protocol("step after episode end; send reset".into())),
                    _ => {}
                }
                let result = self.env.step(Action::new(action[0], action[1]))?;
                if result.done {
                    self.phase = Phase::Done;
                }
                let body = StepBody {
                    observation: nums(&result.observation.values),
                    reward: num(result.reward),
                    done: result.done,
                    state: self.state(),
                };
                Ok(encode(op, true, body))
            }
            Request::Close { .. } => {
                self.phase = Phase::Closed;
                Ok(encode(op, true, Empty {}))
            }
        }
    }

    fn spec(&self) -> SpecBody<'_> {
        let p = self.env.params();
        let landscape = self.env.landscape();
        let b = landscape.bounds();
        let obs_len = match p.observation_mode {
            ObservationMode::FcdScalar => 1,
            ObservationMode::FcdPerChannel => landscape.channels().len(),
            ObservationMode::FullGradient => 2,
        };
        SpecBody {
            observation: ObservationSpec {
                shape: [obs_len],
                mode: p.observation_mode,
            },
            action: ActionSpec {
                shape: [2],
                names: ["linear_accel", "angular_accel"],
                low: nums(&[-p.max_linear_accel_units_per_s2, -p.max_angular_accel_rad_per_s2]),
                high: nums(&[p.max_linear_accel_units_per_s2, p.max_angular_accel_rad_per_s2]),
            },
            bounds: nums(&[b.x_min, b.x_max, b.y_min, b.y_max]),
            channels: landscape.channels(),
            dt_s: num(p.dt_s),
            v_max_units_per_s: num(p.v_max_units_per_s),
            episode_steps: p.episode_steps(),
        }
    }

    fn state(&self) -> StateBody {
        let s = self.env.state();
        StateBody {
            t: num(s.t),
            z: nums(&[s.z.x, s.z.y]),
            heading: num(s.heading),
            speed: num(s.speed),
            angular_velocity: num(s.angular_velocity),
            beta: self
                .env
                .landscape()
                .channels()
                .iter()
                .map(|c| (c.clone(), num(s.beta.get(c))))
                .collect(),
            dopamine: num(s.physio.dopamine),
            serotonin: num(s.physio.serotonin),
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Protocol(_) => "protocol",
        Error::Domain(_) | Error::NonFinite { .. } => "domain",
        Error::Config { .. } => "config",
        _ => "internal",
    }
}

/// Serve requests until end of input.
pub fn serve(exp: Experiment, input: impl BufRead, mut output: impl Write) -> Result<()> {
    let mut session = Session::new(exp)?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", session.handle(&line))?;
        output.flush()?;
    }
    Ok(())
}
