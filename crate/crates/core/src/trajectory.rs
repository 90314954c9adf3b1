//! Per-step trajectory records and their CSV / JSONL file formats.
//!
//! CSV columns, in order:
//!
//! ```text
//! t,x,y,heading,speed,reward,obs_0..obs_{m-1},beta_<channel>...,dopamine,serotonin
//! ```
//!
//! `beta_*` columns follow the landscape's channel order. JSONL lines carry the
//! same fields as `{"t","z":[x,y],"heading","speed","reward","obs":[..],
//! "beta":{channel: weight},"dopamine","serotonin"}`. Floats are written in
//! shortest round-trip form, so reading a file back reproduces every value
//! bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub z: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub reward: f64,
    pub obs: Vec<f64>,
    /// Salience per channel, in [`Trajectory::channels`] order.
    pub beta: Vec<f64>,
    pub dopamine: f64,
    pub serotonin: f64,
}

impl TrajectoryRecord {
    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.heading) * self.speed
    }

    fn scalars(&self) -> impl Iterator<Item = f64> + '_ {
        [self.t, self.z.x, self.z.y, self.heading, self.speed, self.reward]
            .into_iter()
            .chain(self.obs.iter().copied())
            .chain(self.beta.iter().copied())
            .chain([self.dopamine, self.serotonin])
    }

    pub fn is_finite(&self) -> bool {
        self.scalars().all(f64::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub channels: Vec<String>,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    t: f64,
    z: [f64; 2],
    heading: f64,
    speed: f64,
    reward: f64,
    obs: Vec<f64>,
    beta: BTreeMap<String, f64>,
    dopamine: f64,
    serotonin: f64,
}

pub fn csv_header(obs_len: usize, channels: &[String]) -> String {
    let mut cols: Vec<String> = ["t", "x", "y", "heading", "speed", "reward"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..obs_len).map(|i| format!("obs_{i}")));
    cols.extend(channels.iter().map(|c| format!("beta_{c}")));
    cols.push("dopamine".into());
    cols.push("serotonin".into());
    cols.join(",")
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Streams records to a CSV file and, optionally, a JSONL mirror.
pub struct TrajectoryWriter {
    channels: Vec<String>,
    csv: Option<BufWriter<File>>,
    jsonl: Option<BufWriter<File>>,
    wrote_header: bool,
}

impl TrajectoryWriter {
    pub fn create(channels: &[String], csv: Option<&Path>, jsonl: Option<&Path>) -> Result<Self> {
        let open = |p: Option<&Path>| -> Result<Option<BufWriter<File>>> {
            p.map(|p| Ok(BufWriter::new(File::create(p)?))).transpose()
        };
        Ok(TrajectoryWriter {
            channels: channels.to_vec(),
            csv: open(csv)?,
            jsonl: open(jsonl)?,
            wrote_header: false,
        })
    }

    pub fn write(&mut self, rec: &TrajectoryRecord) -> Result<()> {
        if let Some(w) = &mut self.csv {
            if !self.wrote_header {
                writeln!(w, "{}", csv_header(rec.obs.len(), &self.channels))?;
                self.wrote_header = true;
            }
            let line: Vec<String> = rec.scalars().map(fmt_f64).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        if let Some(w) = &mut self.jsonl {
            let j = JsonRecord {
                t: rec.t,
                z: [rec.z.x, rec.z.y],
                heading: rec.heading,
                speed: rec.speed,
                reward: rec.reward,
                obs: rec.obs.clone(),
                beta: self.channels.iter().cloned().zip(rec.beta.iter().copied()).collect(),
                dopamine: rec.dopamine,
                serotonin: rec.serotonin,
            };
            serde_json::to_writer(&mut *w, &j)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if let Some(w) = &mut self.csv {
            if !self.wrote_header {
                writeln!(w, "{}", csv_header(0, &self.channels))?;
            }
            w.flush()?;
        }
        if let Some(w) = &mut self.jsonl {
            w.flush()?;
        }
        Ok(())
    }
}

impl Trajectory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = TrajectoryWriter::create(&self.channels, Some(path), None)?;
        for r in &self.records {
            w.write(r)?;
        }
        w.finish()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = TrajectoryWriter::create(&self.channels, None, Some(path))?;
        for r in &self.records {
            w.write(r)?;
        }
        w.finish()
    }

    /// Read a trajectory file; `.jsonl` / `.ndjson` files are read as JSON
    /// lines, everything else as CSV. Errors name the file and 1-based line.
    pub fn read(path: &Path) -> Result<Trajectory> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let file = File::open(path).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let reader = BufReader::new(file);
        if matches!(ext, "jsonl" | "ndjson") {
            read_jsonl(path, reader)
        } else {
            read_csv(path, reader)
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_csv(path: &Path, reader: impl BufRead) -> Result<Trajectory> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| parse_err(path, 1, e.to_string()))?,
        None => return Err(parse_err(path, 1, "empty file, expected a header")),
    };
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    let fixed = ["t", "x", "y", "heading", "speed", "reward"];
    if cols.len() < fixed.len() + 2 || cols[..fixed.len()] != fixed {
        return Err(parse_err(path, 1, format!("unexpected header {header:?}")));
    }
    if cols[cols.len() - 2..] != ["dopamine", "serotonin"] {
        return Err(parse_err(path, 1, "header must end with dopamine,serotonin"));
    }
    let middle = &cols[fixed.len()..cols.len() - 2];
    let obs_len = middle.iter().take_while(|c| c.starts_with("obs_")).count();
    let mut channels = Vec::new();
    for c in &middle[obs_len..] {
        match c.strip_prefix("beta_") {
            Some(name) => channels.push(name.to_string()),
            None => return Err(parse_err(path, 1, format!("unexpected column {c:?}"))),
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| parse_err(path, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .trim_end()
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(path, lineno, format!("bad number: {e}")))?;
        if vals.len() != cols.len() {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} fields, found {}", cols.len(), vals.len()),
            ));
        }
        let rec = TrajectoryRecord {
            t: vals[0],
            z: Vec2::new(vals[1], vals[2]),
            heading: vals[3],
            speed: vals[4],
            reward: vals[5],
            obs: vals[6..6 + obs_len].to_vec(),
            beta: vals[6 + obs_len..6 + obs_len + channels.len()].to_vec(),
            dopamine: vals[vals.len() - 2],
            serotonin: vals[vals.len() - 1],
        };
        if !rec.is_finite() {
            return Err(parse_err(path, lineno, "non-finite value"));
        }
        records.push(rec);
    }
    Ok(Trajectory { channels, records })
}

fn read_jsonl(path: &Path, reader: impl BufRead) -> Result<Trajectory> {
    let mut channels: Option<Vec<String>> = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_err(path, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let j: JsonRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let names: Vec<String> = j.beta.keys().cloned().collect();
        match &channels {
            None => channels = Some(names.clone()),
            Some(c) if *c != names => return Err(parse_err(path, lineno, "beta channels change mid-file")),
            Some(_) => {}
        }
        let rec = TrajectoryRecord {
            t: j.t,
            z: Vec2::new(j.z[0], j.z[1]),
            heading: j.heading,
            speed: j.speed,
            reward: j.reward,
            obs: j.obs,
            beta: j.beta.values().copied().collect(),
            dopamine: j.dopamine,
            serotonin: j.serotonin,
        };
        if !rec.is_finite() {
            return Err(parse_err(path, lineno, "non-finite value"));
        }
        records.push(rec);
    }
    Ok(Trajectory {
        channels: channels.unwrap_or_default(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: f64, x: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            t,
            z: Vec2::new(x, -x / 3.0),
            heading: 0.1,
            speed: 1.0 / 3.0,
            reward: -1e-17,
            obs: vec![0.25],
            beta: vec![1.5, 0.0],
            dopamine: 0.0,
            serotonin: 1.0,
        }
    }

    #[test]
    fn csv_header_layout() {
        let h = csv_header(2, &["food".into(), "heat".into()]);
        assert_eq!(
            h,
            "t,x,y,heading,speed,reward,obs_0,obs_1,beta_food,beta_heat,dopamine,serotonin"
        );
    }

    #[test]
    fn malformed_csv_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(
            &p,
            "t,x,y,heading,speed,reward,obs_0,dopamine,serotonin\n0.1,0,0,0,1,0,0,0,0\n0.2,0,zero,0,1,0,0,0,0\n",
        )
        .unwrap();
        match Trajectory::read(&p) {
            Err(Error::Parse { line, file, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(file, p);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn csv_and_jsonl_reproduce_values_exactly(
            xs in proptest::collection::vec(-1e6f64..1e6, 1..20),
        ) {
            let traj = Trajectory {
                channels: vec!["food".into(), "water".into()],
                records: xs.iter().enumerate().map(|(i, x)| rec(i as f64 * 0.05, *x)).collect(),
            };
            let dir = tempfile::tempdir().unwrap();
            let csv = dir.path().join("a.csv");
            let jsonl = dir.path().join("a.jsonl");
            traj.write_csv(&csv).unwrap();
            traj.write_jsonl(&jsonl).unwrap();
            prop_assert_eq!(&Trajectory::read(&csv).unwrap(), &traj);
            prop_assert_eq!(&Trajectory::read(&jsonl).unwrap(), &traj);
        }
    }
}
