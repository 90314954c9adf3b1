mod common;

use serde_json::{json, Value};
use taxis_core::rollout::run_episode;
use taxis_core::serve::{serve, Session, PROTOCOL_VERSION};

use common::*;

fn session() -> Session {
    let mut cfg = gaussian_arena(5.0, 1.5, 1.0, run_and_tumble());
    cfg["environment"]["episode_length_s"] = json!(0.25);
    Session::new(experiment(cfg)).unwrap()
}

fn call(s: &mut Session, req: Value) -> Value {
    serde_json::from_str(&s.handle(&req.to_string())).unwrap()
}

fn protocol_error(reply: &Value) -> bool {
    reply["ok"] == json!(false) && reply["error"]["kind"] == json!("protocol")
}

#[test]
fn lifecycle() {
    let mut s = session();
    let spec = call(&mut s, json!({"op": "spec", "version": 1}));
    assert_eq!(spec["ok"], json!(true));
    assert_eq!(spec["observation"]["shape"], json!([1]));
    assert_eq!(spec["action"]["shape"], json!([2]));
    assert_eq!(spec["episode_steps"], json!(5));

    assert!(protocol_error(&call(&mut s, json!({"op": "step", "version": 1, "action": [0.0, 0.0]}))));

    let reset = call(&mut s, json!({"op": "reset", "version": 1, "seed": 3}));
    assert_eq!(reset["seed"], json!(3));
    for i in 0..5 {
        let r = call(&mut s, json!({"op": "step", "version": 1, "action": [1.0, 0.5]}));
        assert_eq!(r["ok"], json!(true));
        assert_eq!(r["done"], json!(i == 4));
    }
    assert!(protocol_error(&call(&mut s, json!({"op": "step", "version": 1, "action": [0.0, 0.0]}))));
    assert_eq!(call(&mut s, json!({"op": "reset", "version": 1}))["ok"], json!(true));

    assert_eq!(call(&mut s, json!({"op": "close", "version": 1}))["ok"], json!(true));
    assert!(s.is_closed());
    assert!(protocol_error(&call(&mut s, json!({"op": "reset", "version": 1}))));
    assert!(protocol_error(&call(&mut s, json!({"op": "spec", "version": 1}))));
}

#[test]
fn malformed_and_foreign_requests() {
    let mut s = session();
    assert!(protocol_error(&call(&mut s, json!({"op": "spec", "version": 2}))));
    assert!(protocol_error(&call(&mut s, json!({"op": "fly", "version": 1}))));
    assert!(protocol_error(&call(&mut s, json!({"op": "step", "version": 1, "action": [1.0]}))));
    assert!(protocol_error(&call(&mut s, json!({"op": "reset", "version": 1, "extra": true}))));
    let raw: Value = serde_json::from_str(&s.handle("{not json")).unwrap();
    assert!(protocol_error(&raw));
    assert_eq!(raw["op"], Value::Null);
    assert_eq!(raw["version"], json!(PROTOCOL_VERSION));

    call(&mut s, json!({"op": "reset", "version": 1}));
    let bad: Value = serde_json::from_str(&s.handle(r#"{"op":"step","version":1,"action":[1e400,0.0]}"#)).unwrap();
    assert_eq!(bad["ok"], json!(false));
}

#[test]
fn floats_carry_seventeen_significant_digits() {
    let mut s = session();
    let line = s.handle(r#"{"op":"reset","version":1,"seed":5}"#);
    let reply: Value = serde_json::from_str(&line).unwrap();
    let x = &reply["state"]["z"][0];
    let text = x.to_string();
    let mantissa = text.split('e').next().unwrap().replace(['-', '.'], "");
    assert_eq!(mantissa.len(), 17, "{text}");
    // the body is flattened into the top-level object, not nested
    assert!(line.starts_with(r#"{"version":1,"ok":true,"op":"reset","seed":5,"#), "{line}");
}

#[test]
fn bridge_rollout_matches_native_trajectory() {
    let actions: Vec<[f64; 2]> = (0..100)
        .map(|i| {
            let t = i as f64;
            [3.0 * (0.3 * t).sin(), 40.0 * (0.17 * t).cos()]
        })
        .collect();
    let mut cfg = gaussian_arena(5.0, 1.5, 1.0, json!({"kind": "scripted", "actions": actions}));
    cfg["environment"]["episode_length_s"] = json!(5.0);
    cfg["environment"]["noise_std"] = json!(0.05);
    let exp = experiment(cfg);
    let native = run_episode(&exp, 77).unwrap();

    let input: String = std::iter::once(r#"{"op":"reset","version":1,"seed":77}"#.to_string())
        .chain(actions.iter().map(|a| json!({"op": "step", "version": 1, "action": a}).to_string()))
        .chain(std::iter::once(r#"{"op":"close","version":1}"#.to_string()))
        .map(|l| l + "\n")
        .collect();
    let mut out = Vec::new();
    serve(exp, input.as_bytes(), &mut out).unwrap();
    let replies: Vec<Value> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(replies.len(), 102);

    let f = |v: &Value| v.as_f64().unwrap();
    for (rec, reply) in native.records.iter().zip(&replies[1..101]) {
        let st = &reply["state"];
        assert_eq!(f(&st["t"]), rec.t);
        assert_eq!(f(&st["z"][0]), rec.z.x);
        assert_eq!(f(&st["z"][1]), rec.z.y);
        assert_eq!(f(&st["heading"]), rec.heading);
        assert_eq!(f(&st["speed"]), rec.speed);
        assert_eq!(f(&reply["reward"]), rec.reward);
        assert_eq!(f(&reply["observation"][0]), rec.obs[0]);
        assert_eq!(f(&st["beta"]["food"]), rec.beta[0]);
    }
    assert_eq!(replies[100]["done"], json!(true));
}
