//! Episode execution, parallel rollouts and the simulate artifact set.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig, TrajectoryFormat};
use crate::controllers::PolicyRng;
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::trajectory::{Trajectory, TrajectoryRecord, TrajectoryWriter};

pub const ENGINE_NAME: &str = "taxis-core";
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Policy randomness lives on its own ChaCha stream so environment noise and
/// controller noise never interleave.
pub fn policy_rng(seed: u64) -> PolicyRng {
    let mut rng = PolicyRng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn record(env: &Environment, obs: &[f64], reward: f64) -> TrajectoryRecord {
    let s = env.state();
    TrajectoryRecord {
        t: s.t,
        z: s.z,
        heading: s.heading,
        speed: s.speed,
        reward,
        obs: obs.to_vec(),
        beta: env.landscape().channels().iter().map(|c| s.beta.get(c)).collect(),
        dopamine: s.physio.dopamine,
        serotonin: s.physio.serotonin,
    }
}

/// Run one episode, handing every post-step record to `visit`.
pub fn run_episode_with(
    exp: &Experiment,
    episode: usize,
    seed: u64,
    steps: Option<usize>,
    mut visit: impl FnMut(&TrajectoryRecord) -> Result<()>,
) -> Result<()> {
    let mut env = exp.environment()?;
    let mut policy = exp.policy()?;
    let mut rng = policy_rng(seed);
    let mut obs = env.reset(seed)?;
    let n = steps.unwrap_or_else(|| exp.config.environment.episode_steps());
    for step in 0..n {
        let action = policy.act(&obs, &env.proprioception(), &env.state().physio, &mut rng)?;
        let result = env.step(action).map_err(|e| Error::NonFinite {
            episode,
            step,
            dump: format!("{e}; action {action:?}; state {:?}", env.state()),
        })?;
        let rec = record(&env, &result.observation.values, result.reward);
        if !rec.is_finite() {
            return Err(Error::NonFinite {
                episode,
                step,
                dump: format!("{rec:?}"),
            });
        }
        visit(&rec)?;
        obs = result.observation;
    }
    Ok(())
}

pub fn run_episode(exp: &Experiment, seed: u64) -> Result<Trajectory> {
    let mut records = Vec::with_capacity(exp.config.environment.episode_steps());
    run_episode_with(exp, 0, seed, None, |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok(Trajectory {
        channels: exp.landscape.channels().to_vec(),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub seed: u64,
    pub steps: usize,
    pub total_reward: f64,
    pub mean_reward: f64,
    pub final_position: [f64; 2],
    /// Distance to the nearest attractant center at the end of the episode.
    pub final_distance: Option<f64>,
    pub dwell_fraction: f64,
    pub files: Vec<String>,
}

struct SummaryAccumulator {
    steps: usize,
    total_reward: f64,
    dwell_steps: usize,
    last: Vec2,
    dwell_threshold: f64,
}

impl SummaryAccumulator {
    fn push(&mut self, r: &TrajectoryRecord) {
        self.steps += 1;
        self.total_reward += r.reward;
        if r.speed < self.dwell_threshold {
            self.dwell_steps += 1;
        }
        self.last = r.z;
    }
}

/// Run one episode, streaming it into trajectory files in `dir`.
pub fn simulate_episode(exp: &Experiment, episode: usize, seed: u64, dir: &Path) -> Result<EpisodeSummary> {
    let stem = format!("episode_{episode:04}_seed_{seed}");
    let formats = &exp.config.output.formats;
    let csv = formats.contains(&TrajectoryFormat::Csv).then(|| dir.join(format!("{stem}.csv")));
    let jsonl = formats
        .contains(&TrajectoryFormat::Jsonl)
        .then(|| dir.join(format!("{stem}.jsonl")));
    let mut writer = TrajectoryWriter::create(exp.landscape.channels(), csv.as_deref(), jsonl.as_deref())?;
    let mut acc = SummaryAccumulator {
        steps: 0,
        total_reward: 0.0,
        dwell_steps: 0,
        last: Vec2::ZERO,
        dwell_threshold: exp.dwell_speed_threshold(),
    };
    run_episode_with(exp, episode, seed, None, |r| {
        acc.push(r);
        writer.write(r)
    })?;
    writer.finish()?;
    let files = [csv, jsonl]
        .into_iter()
        .flatten()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    Ok(EpisodeSummary {
        episode,
        seed,
        steps: acc.steps,
        total_reward: acc.total_reward,
        mean_reward: acc.total_reward / acc.steps.max(1) as f64,
        final_position: [acc.last.x, acc.last.y],
        final_distance: exp.landscape.nearest_attractant_distance(acc.last),
        dwell_fraction: acc.dwell_steps as f64 / acc.steps.max(1) as f64,
        files,
    })
}

/// Run `f` over episode indices on a pool of `workers` threads, preserving
/// input order in the output.
pub fn par_episodes<T: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub n_episodes: usize,
    pub mean_reward: f64,
    pub mean_final_distance: Option<f64>,
    pub mean_dwell_fraction: f64,
    pub dwell_speed_threshold: f64,
    pub episodes: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub engine: &'static str,
    pub engine_version: &'static str,
    pub seeds: Vec<u64>,
    pub trajectory_files: Vec<String>,
    pub config: &'a ExperimentConfig,
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Run every configured episode, write trajectories, the summary, and the
/// manifest (last, as the commit marker).
pub fn simulate(exp: &Experiment, out_dir: &Path, workers: usize) -> Result<SimulationSummary> {
    fs::create_dir_all(out_dir)?;
    let seeds = exp.seeds();
    let episodes = par_episodes(seeds.len(), workers, |i| simulate_episode(exp, i, seeds[i], out_dir))?;

    let n = episodes.len();
    let total_steps: usize = episodes.iter().map(|e| e.steps).sum();
    let distances: Vec<f64> = episodes.iter().filter_map(|e| e.final_distance).collect();
    let summary = SimulationSummary {
        n_episodes: n,
        mean_reward: episodes.iter().map(|e| e.total_reward).sum::<f64>() / total_steps.max(1) as f64,
        mean_final_distance: (!distances.is_empty())
            .then(|| distances.iter().sum::<f64>() / distances.len() as f64),
        mean_dwell_fraction: episodes.iter().map(|e| e.dwell_fraction).sum::<f64>() / n as f64,
        dwell_speed_threshold: exp.dwell_speed_threshold(),
        episodes,
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    let manifest = Manifest {
        engine: ENGINE_NAME,
        engine_version: ENGINE_VERSION,
        seeds,
        trajectory_files: summary.episodes.iter().flat_map(|e| e.files.clone()).collect(),
        config: &exp.config,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Paths of the trajectory files a run wrote, in episode order.
pub fn trajectory_paths(dir: &Path, summary: &SimulationSummary) -> Vec<PathBuf> {
    summary
        .episodes
        .iter()
        .flat_map(|e| e.files.iter().map(|f| dir.join(f)))
        .collect()
}
