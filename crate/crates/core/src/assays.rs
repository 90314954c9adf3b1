//! Behavioral and statistical assays over trajectories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Bounds, Vec2};
use crate::landscape::{Landscape, SalienceVector};
use crate::trajectory::TrajectoryRecord;

/// Minimum post-burn-in samples for the stationary-distribution assay.
pub const MIN_STATIONARY_SAMPLES: usize = 100_000;
/// Minimum number of complete runs for the step-length tail fit.
pub const MIN_RUNS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssayReport {
    pub name: String,
    pub statistics: BTreeMap<String, f64>,
    pub pass: bool,
    pub n_samples: usize,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl AssayReport {
    fn new(name: &str, n_samples: usize) -> Self {
        AssayReport {
            name: name.to_string(),
            statistics: BTreeMap::new(),
            pass: false,
            n_samples,
            seed: None,
            flags: Vec::new(),
        }
    }

    fn stat(&mut self, key: &str, v: f64) {
        if v.is_finite() {
            self.statistics.insert(key.to_string(), v);
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.statistics.get(key).copied()
    }

    /// Two-column human-readable table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{}  [{}]  n={}\n",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.n_samples
        );
        for (k, v) in &self.statistics {
            out.push_str(&format!("  {k:<24} {v:>14.6}\n"));
        }
        for f in &self.flags {
            out.push_str(&format!("  flag: {f}\n"));
        }
        out
    }
}

/// Duration represented by each record: the gap to the previous record, with
/// the first record taking the first gap.
pub fn record_durations(records: &[TrajectoryRecord]) -> Vec<f64> {
    let n = records.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut d: Vec<f64> = records.windows(2).map(|w| w[1].t - w[0].t).collect();
    d.insert(0, d[0]);
    d
}

/// `CI = (T_in − T_out) / (T_in + T_out)` aggregated over trajectories, where
/// `T_in` is time spent within `radius` of `target`. Passes when CI exceeds
/// `threshold`.
pub fn chemotaxis_index(
    trajectories: &[&[TrajectoryRecord]],
    target: Vec2,
    radius: f64,
    threshold: f64,
) -> Result<AssayReport> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Assay(format!("radius must be > 0, got {radius}")));
    }
    if trajectories.is_empty() {
        return Err(Error::Assay("no trajectories".into()));
    }
    let (mut t_in, mut t_out, mut n) = (0.0, 0.0, 0);
    for traj in trajectories {
        let durations = record_durations(traj);
        if durations.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Assay("zero-duration trajectory".into()));
        }
        for (r, d) in traj.iter().zip(durations) {
            if (r.z - target).norm() <= radius {
                t_in += d;
            } else {
                t_out += d;
            }
            n += 1;
        }
    }
    let ci = (t_in - t_out) / (t_in + t_out);
    let mut rep = AssayReport::new("chemotaxis_index", n);
    rep.stat("ci", ci);
    rep.stat("time_in_s", t_in);
    rep.stat("time_out_s", t_out);
    rep.stat("radius", radius);
    rep.stat("threshold", threshold);
    rep.stat("n_trajectories", trajectories.len() as f64);
    rep.pass = ci > threshold;
    Ok(rep)
}

/// Fraction of `bounds` covered by the disk, which is the chemotaxis index an
/// agent with uniform occupancy would score as `2f − 1`.
pub fn disk_area_fraction(bounds: &Bounds, center: Vec2, radius: f64) -> f64 {
    let disk = std::f64::consts::PI * radius * radius;
    let inside = center.x - radius >= bounds.x_min
        && center.x + radius <= bounds.x_max
        && center.y - radius >= bounds.y_min
        && center.y + radius <= bounds.y_max;
    if inside {
        return disk / bounds.area();
    }
    let n = 400;
    let hits = bounds
        .midpoint_grid(n, n)
        .into_iter()
        .filter(|z| (*z - center).norm() <= radius)
        .count();
    hits as f64 / (n * n) as f64
}

/// Normalized target mass per cell of a `rows × cols` grid over the landscape
/// bounds, by the midpoint rule on `γ(z; β)`.
pub fn target_cell_probabilities(
    landscape: &Landscape,
    beta: &SalienceVector,
    rows: usize,
    cols: usize,
) -> Result<Vec<f64>> {
    let logs = landscape
        .bounds()
        .midpoint_grid(rows, cols)
        .into_iter()
        .map(|z| landscape.log_density(z, beta))
        .collect::<Result<Vec<f64>>>()?;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Normalized histogram of points over a `rows × cols` grid of `bounds`.
/// Points outside the bounds are ignored.
pub fn empirical_histogram(points: impl IntoIterator<Item = Vec2>, bounds: &Bounds, rows: usize, cols: usize) -> Vec<f64> {
    let mut counts = vec![0.0; rows * cols];
    let mut n = 0.0;
    for z in points {
        if let Some(i) = bounds.cell_index(z, rows, cols) {
            counts[i] += 1.0;
            n += 1.0;
        }
    }
    if n > 0.0 {
        for c in &mut counts {
            *c /= n;
        }
    }
    counts
}

/// `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Total-variation distance between the post-burn-in visit histogram and the
/// normalized target `γ/∫γ`. Passes when TV is below `threshold`.
pub fn stationary_tv_distance(
    positions: &[Vec2],
    landscape: &Landscape,
    beta: &SalienceVector,
    grid: (usize, usize),
    burn_in: usize,
    threshold: f64,
) -> Result<AssayReport> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 {
        return Err(Error::Assay("grid must be non-empty".into()));
    }
    let kept = positions.get(burn_in..).unwrap_or(&[]);
    if kept.len() < MIN_STATIONARY_SAMPLES {
        return Err(Error::Assay(format!(
            "{} samples after burn-in, need at least {MIN_STATIONARY_SAMPLES}",
            kept.len()
        )));
    }
    let target = target_cell_probabilities(landscape, beta, rows, cols)?;
    let hist = empirical_histogram(kept.iter().copied(), landscape.bounds(), rows, cols);
    let tv = total_variation(&hist, &target);
    let mut rep = AssayReport::new("stationary_tv", kept.len());
    rep.stat("tv_distance", tv);
    rep.stat("burn_in", burn_in as f64);
    rep.stat("grid_rows", rows as f64);
    rep.stat("grid_cols", cols as f64);
    rep.stat("threshold", threshold);
    rep.pass = tv < threshold;
    Ok(rep)
}

/// Lengths of contiguous above-threshold-speed segments. Segments touching
/// either end of the trajectory are censored and dropped.
pub fn run_lengths(records: &[TrajectoryRecord], speed_threshold: f64) -> Vec<f64> {
    let durations = record_durations(records);
    let mut runs = Vec::new();
    let mut current: Option<f64> = None;
    let mut censored = true;
    for (r, d) in records.iter().zip(durations) {
        if r.speed > speed_threshold {
            *current.get_or_insert(0.0) += r.speed * d;
        } else {
            if let Some(len) = current.take() {
                if !censored {
                    runs.push(len);
                }
            }
            censored = false;
        }
    }
    runs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub n_tail: usize,
    pub l_min: f64,
    /// Power-law exponent of `p(ℓ) ∝ ℓ^(−α)`, `α̂ = 1 + n / Σ ln(ℓ/ℓ_min)`.
    pub alpha: f64,
    /// Rate of the exponential fitted to `ℓ − ℓ_min`.
    pub lambda: f64,
    /// Log-likelihood ratio, power law minus exponential.
    pub llr: f64,
    pub degenerate: bool,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fit a Pareto tail and a shifted exponential to the lengths `≥ l_min`
/// (default: the median) and compare them by log-likelihood.
pub fn tail_fit(lengths: &[f64], l_min: Option<f64>) -> TailFit {
    let l_min = l_min.unwrap_or_else(|| median(lengths));
    let tail: Vec<f64> = lengths.iter().copied().filter(|&l| l >= l_min).collect();
    let n = tail.len() as f64;
    let log_sum: f64 = tail.iter().map(|l| (l / l_min).ln()).sum();
    let excess: f64 = tail.iter().map(|l| l - l_min).sum::<f64>() / n;
    let degenerate = tail.len() < 2 || !(l_min > 0.0) || !(log_sum > 0.0) || !(excess > 0.0);
    if degenerate {
        return TailFit {
            n_tail: tail.len(),
            l_min,
            alpha: f64::NAN,
            lambda: f64::NAN,
            llr: f64::NAN,
            degenerate: true,
        };
    }
    let alpha = 1.0 + n / log_sum;
    let lambda = 1.0 / excess;
    let ll_pow = n * ((alpha - 1.0).ln() - l_min.ln()) - alpha * log_sum;
    let ll_exp = n * lambda.ln() - lambda * excess * n;
    TailFit {
        n_tail: tail.len(),
        l_min,
        alpha,
        lambda,
        llr: ll_pow - ll_exp,
        degenerate: false,
    }
}

/// Run-length tail analysis. Passes when the power law is preferred (LLR > 0)
/// and the fit is not degenerate.
pub fn step_length_tail(trajectories: &[&[TrajectoryRecord]], speed_threshold: f64) -> Result<AssayReport> {
    let lengths: Vec<f64> = trajectories
        .iter()
        .flat_map(|t| run_lengths(t, speed_threshold))
        .collect();
    step_length_tail_from_lengths(&lengths)
}

pub fn step_length_tail_from_lengths(lengths: &[f64]) -> Result<AssayReport> {
    if lengths.len() < MIN_RUNS {
        return Err(Error::Assay(format!(
            "{} runs found, need at least {MIN_RUNS}",
            lengths.len()
        )));
    }
    let fit = tail_fit(lengths, None);
    let mut rep = AssayReport::new("levy_tail", lengths.len());
    rep.stat("n_runs", lengths.len() as f64);
    rep.stat("n_tail", fit.n_tail as f64);
    rep.stat("l_min", fit.l_min);
    rep.stat("mean_run_length", lengths.iter().sum::<f64>() / lengths.len() as f64);
    if fit.degenerate {
        rep.flags.push("degenerate: zero-variance tail".into());
        rep.stat("degenerate", 1.0);
        rep.pass = false;
    } else {
        rep.stat("alpha_hat", fit.alpha);
        rep.stat("exp_rate", fit.lambda);
        rep.stat("llr", fit.llr);
        rep.stat("llr_per_run", fit.llr / fit.n_tail as f64);
        rep.stat("degenerate", 0.0);
        rep.pass = fit.llr > 0.0;
    }
    Ok(rep)
}

/// Empirical complementary CDF `(ℓ, P(L ≥ ℓ))`, sorted ascending.
pub fn ccdf(lengths: &[f64]) -> Vec<(f64, f64)> {
    let mut v = lengths.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().map(|(i, &l)| (l, (n - i as f64) / n)).collect()
}
