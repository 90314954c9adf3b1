use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use taxis_core::assays::{self, AssayReport};
use taxis_core::config::{load_experiment, Experiment};
use taxis_core::gradcheck::{gradcheck, GradcheckOptions};
use taxis_core::inverse::{self, FitParams, FitTarget, Optimizer, TrajectoryDataset};
use taxis_core::landscape::{Polarity, SalienceVector};
use taxis_core::rollout::{self, write_json};
use taxis_core::trajectory::{fmt_f64, Trajectory, TrajectoryRecord};
use taxis_core::{Bounds, Error, Vec2};

#[derive(Parser)]
#[command(name = "taxis", version, about = "Affective taxis simulator and experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured episodes and write trajectories, summary and manifest.
    Simulate(SimulateArgs),
    /// Run a behavioral assay over trajectory files (exit 0 pass, 1 fail).
    Assay(AssayArgs),
    /// Fit an energy field to trajectory data.
    Fit(FitArgs),
    /// Check analytic gradients and the FCD identity numerically.
    Gradcheck(GradcheckArgs),
    /// Serve the environment over line-delimited JSON on stdin/stdout.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `environment.dt_s=0.01`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Base seed; episode i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, env = "TAXIS_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AssayKind {
    ChemotaxisIndex,
    StationaryTv,
    LevyTail,
}

#[derive(Args)]
struct AssayArgs {
    kind: AssayKind,
    /// Trajectory files (CSV or JSONL).
    #[arg(required = true)]
    trajectories: Vec<PathBuf>,
    /// Experiment config supplying the landscape and defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Chemotaxis target as `x,y`; defaults to the first attractant center.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    target: Option<(f64, f64)>,
    /// Chemotaxis region radius; defaults to a disk covering 10% of the arena.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    #[arg(long, default_value_t = 32)]
    grid: usize,
    /// Run/dwell speed threshold; defaults to the config's dwell threshold.
    #[arg(long)]
    speed_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "TAXIS_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum OptimizerArg {
    ExactGradient,
    ForwardGradient,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum TargetArg {
    Observation,
    Reward,
}

#[derive(Args)]
struct FitArgs {
    /// Trajectory files (CSV or JSONL).
    #[arg(long = "data", required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Config of the generating experiment; enables the recovery report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Field bounds as `x_min,x_max,y_min,y_max` when no truth config is given.
    #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
    bounds: Option<Bounds>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::ExactGradient)]
    optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value_t = TargetArg::Observation)]
    target: TargetArg,
    /// Grid side length.
    #[arg(long, default_value_t = 12)]
    grid: usize,
    #[arg(long)]
    rbf_scale: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    /// Defaults to half the stability bound (divided by n_weights + 2 for
    /// forward gradients).
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    #[arg(long, default_value_t = inverse::DEFAULT_L2)]
    l2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit each of this many contiguous segments of the data separately.
    #[arg(long, default_value_t = 1)]
    segments: usize,
    #[arg(long, default_value_t = 32)]
    eval_grid: usize,
    #[arg(long, env = "TAXIS_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// Perturb analytic gradients; the check must then fail.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
    #[arg(long, env = "TAXIS_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let v = parse_floats(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_bounds(s: &str) -> Result<Bounds, String> {
    let v = parse_floats(s, 4)?;
    Bounds::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

/// Exit code for an error: 3 for numerical failures, 2 otherwise.
fn failure(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::NonFinite { .. } | Error::FitDiverged { .. } => ExitCode::from(3),
        _ => ExitCode::from(2),
    }
}

fn out_dir(arg: Option<PathBuf>, exp: Option<&Experiment>) -> PathBuf {
    arg.or_else(|| exp.and_then(|e| e.config.output.directory.clone()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Assay(a) => assay(a),
        Command::Fit(a) => fit(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Serve(a) => serve(a),
    };
    result.unwrap_or_else(|e| failure(&e))
}

fn simulate(a: SimulateArgs) -> Result<ExitCode, Error> {
    let mut overrides = a.cfg.overrides.clone();
    if let Some(seed) = a.seed {
        overrides.push(format!("rollout.base_seed={seed}"));
        overrides.push("rollout.seeds=null".into());
    }
    let exp = load_experiment(&a.cfg.config, &overrides)?;
    let dir = out_dir(a.out, Some(&exp));
    let summary = rollout::simulate(&exp, &dir, a.workers)?;
    println!(
        "{} episodes -> {} (mean reward {:.6}, mean dwell fraction {:.3})",
        summary.n_episodes,
        dir.display(),
        summary.mean_reward,
        summary.mean_dwell_fraction
    );
    Ok(ExitCode::SUCCESS)
}

fn read_trajectories(paths: &[PathBuf]) -> Result<Vec<Trajectory>, Error> {
    paths.iter().map(|p| Trajectory::read(p)).collect()
}

fn assay(a: AssayArgs) -> Result<ExitCode, Error> {
    let exp = a.config.as_deref().map(|p| load_experiment(p, &[])).transpose()?;
    let trajs = read_trajectories(&a.trajectories)?;
    let slices: Vec<&[TrajectoryRecord]> = trajs.iter().map(|t| t.records.as_slice()).collect();
    let dir = out_dir(a.out, exp.as_ref());
    fs::create_dir_all(&dir)?;
    let mut report = match a.kind {
        AssayKind::ChemotaxisIndex => {
            let bounds = exp.as_ref().map(|e| *e.landscape.bounds());
            let target = match (a.target, &exp) {
                (Some((x, y)), _) => Vec2::new(x, y),
                (None, Some(e)) => e
                    .landscape
                    .components()
                    .iter()
                    .find(|c| c.polarity == Polarity::Attractant)
                    .map(|c| c.center)
                    .ok_or_else(|| Error::Assay("config has no attractant; pass --target".into()))?,
                (None, None) => return Err(Error::Assay("pass --target or --config".into())),
            };
            let radius = match (a.radius, bounds) {
                (Some(r), _) => r,
                (None, Some(b)) => (0.1 * b.area() / std::f64::consts::PI).sqrt(),
                (None, None) => return Err(Error::Assay("pass --radius or --config".into())),
            };
            let mut r = assays::chemotaxis_index(&slices, target, radius, a.threshold.unwrap_or(0.5))?;
            if let Some(b) = bounds {
                let f = assays::disk_area_fraction(&b, target, radius);
                r.statistics.insert("area_fraction".into(), f);
                r.statistics.insert("uniform_ci".into(), 2.0 * f - 1.0);
            }
            r
        }
        AssayKind::StationaryTv => {
            let e = exp
                .as_ref()
                .ok_or_else(|| Error::Assay("stationary_tv needs --config for the landscape".into()))?;
            let [traj] = trajs.as_slice() else {
                return Err(Error::Assay("stationary_tv takes exactly one trajectory".into()));
            };
            let beta = record_beta(traj, a.burn_in)?;
            let points: Vec<Vec2> = traj.records.iter().map(|r| r.z).collect();
            let r = assays::stationary_tv_distance(
                &points,
                &e.landscape,
                &beta,
                (a.grid, a.grid),
                a.burn_in,
                a.threshold.unwrap_or(0.05),
            )?;
            write_histogram(&dir.join("stationary_tv_histogram.csv"), e, &beta, &points[a.burn_in..], a.grid)?;
            r
        }
        AssayKind::LevyTail => {
            let th = match (a.speed_threshold, &exp) {
                (Some(t), _) => t,
                (None, Some(e)) => e.dwell_speed_threshold(),
                (None, None) => return Err(Error::Assay("pass --speed-threshold or --config".into())),
            };
            let lengths: Vec<f64> = slices.iter().flat_map(|t| assays::run_lengths(t, th)).collect();
            let mut r = assays::step_length_tail_from_lengths(&lengths)?;
            r.statistics.insert("speed_threshold".into(), th);
            write_ccdf(&dir.join("levy_tail_ccdf.csv"), &lengths)?;
            r
        }
    };
    report.seed = a.seed;
    let name = report.name.clone();
    write_json(&dir.join(format!("{name}_report.json")), &report)?;
    print!("{}", report.table());
    Ok(verdict(&report))
}

fn verdict(r: &AssayReport) -> ExitCode {
    if r.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

/// Salience recorded in the trajectory at the first post-burn-in record.
fn record_beta(traj: &Trajectory, burn_in: usize) -> Result<SalienceVector, Error> {
    let rec = traj
        .records
        .get(burn_in)
        .ok_or_else(|| Error::Assay("trajectory shorter than burn-in".into()))?;
    SalienceVector::from_pairs(traj.channels.iter().map(String::as_str).zip(rec.beta.iter().copied()))
}

fn write_histogram(path: &Path, e: &Experiment, beta: &SalienceVector, points: &[Vec2], n: usize) -> Result<(), Error> {
    let b = e.landscape.bounds();
    let target = assays::target_cell_probabilities(&e.landscape, beta, n, n)?;
    let hist = assays::empirical_histogram(points.iter().copied(), b, n, n);
    let mut text = String::from("x,y,empirical,target\n");
    for ((z, h), t) in b.midpoint_grid(n, n).iter().zip(&hist).zip(&target) {
        text.push_str(&format!("{},{},{},{}\n", fmt_f64(z.x), fmt_f64(z.y), fmt_f64(*h), fmt_f64(*t)));
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_ccdf(path: &Path, lengths: &[f64]) -> Result<(), Error> {
    let mut text = String::from("run_length,ccdf\n");
    for (l, p) in assays::ccdf(lengths) {
        text.push_str(&format!("{},{}\n", fmt_f64(l), fmt_f64(p)));
    }
    fs::write(path, text)?;
    Ok(())
}

fn fit(a: FitArgs) -> Result<ExitCode, Error> {
    let truth = a.truth.as_deref().map(|p| load_experiment(p, &[])).transpose()?;
    let bounds = match (a.bounds, &truth) {
        (Some(b), _) => b,
        (None, Some(t)) => *t.landscape.bounds(),
        (None, None) => return Err(Error::domain("pass --bounds or --truth")),
    };
    let trajs = read_trajectories(&a.data)?;
    let records: Vec<&TrajectoryRecord> = trajs.iter().flat_map(|t| &t.records).collect();
    let target = match a.target {
        TargetArg::Observation => FitTarget::Observation,
        TargetArg::Reward => FitTarget::Reward,
    };
    let params = FitParams {
        grid_shape: (a.grid, a.grid),
        rbf_scale: a.rbf_scale,
        optimizer: match a.optimizer {
            OptimizerArg::ExactGradient => Optimizer::ExactGradient,
            OptimizerArg::ForwardGradient => Optimizer::ForwardGradient,
        },
        epochs: a.epochs,
        step_size: a.step_size,
        batch_size: a.batch_size,
        l2: a.l2,
        seed: a.seed,
    };
    let dir = out_dir(a.out, None);
    fs::create_dir_all(&dir)?;
    let segments = a.segments.max(1);
    let chunk = records.len().div_ceil(segments).max(1);
    for (i, part) in records.chunks(chunk).enumerate() {
        let suffix = if segments == 1 { String::new() } else { format!("_segment_{i}") };
        let data = TrajectoryDataset::from_records(bounds, part.iter().copied(), target)?;
        let result = inverse::fit_energy(&data, &params)?;
        write_json(
            &dir.join(format!("model{suffix}.json")),
            &result.model.to_file(Some(result.metadata.clone())),
        )?;
        inverse::write_loss_curve(&dir.join(format!("loss_curve{suffix}.csv")), &result.loss_curve)?;
        result
            .model
            .write_grid_csv(&dir.join(format!("field_grid{suffix}.csv")), a.eval_grid, a.eval_grid)?;
        print!("fit{suffix}: final loss {:.6e}", result.final_loss);
        if let Some(t) = &truth {
            let traj = trajs.first().expect("at least one data file");
            let beta = record_beta(traj, 0)?;
            let rep = inverse::evaluate_recovery(&result.model, &t.landscape, &beta, a.eval_grid, a.eval_grid)?;
            print!(", recovery correlation {:.4}", rep.correlation);
            write_json(&dir.join(format!("recovery{suffix}.json")), &rep)?;
        }
        println!();
    }
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(a: GradcheckArgs) -> Result<ExitCode, Error> {
    let exp = load_experiment(&a.cfg.config, &a.cfg.overrides)?;
    let opts = GradcheckOptions {
        n_points: a.points,
        seed: a.seed,
        corrupt_gradient: a.corrupt_gradient,
        ..GradcheckOptions::default()
    };
    let report = gradcheck(&exp, &opts)?;
    println!("landscape gradient max rel err  {:.3e}", report.landscape_max_rel_err);
    println!("rbf gradient max rel err        {:.3e}", report.rbf_max_rel_err);
    println!("fcd identity max abs err        {:.3e}", report.fcd_identity_max_abs_err);
    for p in &report.dt_sweep {
        println!("dt {:<10} fd error {:.6e}", p.dt, p.mean_abs_err);
    }
    let ratios: Vec<String> = report.error_ratios.iter().map(|r| format!("{r:.4}")).collect();
    println!("error ratios per halving        {}", ratios.join(" "));
    println!("{}", if report.pass { "PASS" } else { "FAIL" });
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("gradcheck.json"), &report)?;
    }
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn serve(a: ServeArgs) -> Result<ExitCode, Error> {
    let exp = load_experiment(&a.cfg.config, &a.cfg.overrides)?;
    let stdin = io::stdin();
    taxis_core::serve::serve(exp, stdin.lock(), io::stdout().lock())?;
    Ok(ExitCode::SUCCESS)
}
