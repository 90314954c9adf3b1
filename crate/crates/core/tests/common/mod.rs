#![allow(dead_code)]

use std::path::PathBuf;

use serde_json::{json, Value};
use taxis_core::config::{load_experiment, Experiment, ExperimentConfig};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn shipped(name: &str) -> Experiment {
    load_experiment(&config_path(name), &[]).unwrap()
}

pub fn experiment(v: Value) -> Experiment {
    let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
    cfg.validate().unwrap()
}

/// Single gaussian at the origin in a square arena, with a policy slot.
pub fn gaussian_arena(half: f64, scale: f64, food: f64, policy: Value) -> Value {
    json!({
        "landscape": {
            "bounds": {"x_min": -half, "x_max": half, "y_min": -half, "y_max": half},
            "components": [
                {"kind": "gaussian", "center": [0.0, 0.0], "scale": scale, "channel": "food", "polarity": "attractant"}
            ]
        },
        "salience": {"mode": "fixed", "weights": {"food": food}},
        "environment": {
            "dt_s": 0.05,
            "v_max_units_per_s": 2.0,
            "max_linear_accel_units_per_s2": 40.0,
            "max_angular_accel_rad_per_s2": 1000.0,
            "observation_mode": "fcd_scalar",
            "episode_length_s": 20.0
        },
        "policy": policy
    })
}

pub fn run_and_tumble() -> Value {
    json!({
        "kind": "run_and_tumble",
        "run_speed_units_per_s": 1.0,
        "base_tumble_rate_per_s": 10.0,
        "sensitivity_s": 8.0,
        "tumble_angular_accel_rad_per_s2": 1000.0
    })
}

pub fn klinotaxis() -> Value {
    json!({
        "kind": "klinotaxis",
        "cruise_speed_units_per_s": 0.5,
        "steering_gain": 16.0,
        "exploration_noise_rad_per_s2": 20.0,
        "adaptation_time_constant_s": 0.5
    })
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
