//! Recovering an energy surface from directional-derivative supervision.
//!
//! The field is a normalized RBF expansion over a regular grid of centers,
//! `Ê(z) = Σ_k w_k ψ_k(z)` with `ψ_k = φ_k / Σ_j φ_j` and Gaussian `φ_k`.
//! Because the `ψ_k` sum to one, shifting every weight by a constant shifts
//! `Ê` by that constant and leaves every gradient untouched.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Bounds, Vec2};
use crate::landscape::{Landscape, SalienceVector};
use crate::trajectory::{fmt_f64, TrajectoryRecord};

pub const DEFAULT_L2: f64 = 1e-4;
pub const DIVERGENCE_LIMIT: f64 = 1e6;
pub const MIN_GRID_SIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub z: Vec2,
    pub v: Vec2,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTarget {
    /// The first observation value (the sensed FCD signal, possibly noisy).
    #[default]
    Observation,
    /// The noiseless reward.
    Reward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    bounds: Bounds,
    samples: Vec<Sample>,
}

impl TrajectoryDataset {
    pub fn new(bounds: Bounds, samples: Vec<Sample>) -> Result<Self> {
        bounds.validate()?;
        for (i, s) in samples.iter().enumerate() {
            if !(s.z.is_finite() && s.v.is_finite() && s.r.is_finite()) {
                return Err(Error::domain(format!("sample {i} is not finite")));
            }
            if !bounds.contains(s.z) {
                return Err(Error::domain(format!("sample {i} at {:?} lies outside the bounds", s.z)));
            }
        }
        Ok(TrajectoryDataset { bounds, samples })
    }

    /// Build samples from post-step records: position, velocity and the
    /// chosen supervision signal all refer to the same instant.
    pub fn from_records<'a>(
        bounds: Bounds,
        records: impl IntoIterator<Item = &'a TrajectoryRecord>,
        target: FitTarget,
    ) -> Result<Self> {
        let samples = records
            .into_iter()
            .map(|rec| {
                let r = match target {
                    FitTarget::Reward => rec.reward,
                    FitTarget::Observation => match rec.obs.as_slice() {
                        [r] => *r,
                        other => {
                            return Err(Error::domain(format!(
                                "observation target needs scalar observations, got {} values; use the reward target",
                                other.len()
                            )))
                        }
                    },
                };
                Ok(Sample {
                    z: rec.z,
                    v: rec.velocity(),
                    r,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bounds, samples)
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricEnergy {
    bounds: Bounds,
    rows: usize,
    cols: usize,
    rbf_scale: f64,
    centers: Vec<Vec2>,
    /// Row-major, rows along y.
    pub weights: Vec<f64>,
}

impl ParametricEnergy {
    pub fn new(bounds: Bounds, shape: (usize, usize), rbf_scale: Option<f64>) -> Result<Self> {
        bounds.validate()?;
        let (rows, cols) = shape;
        if rows < MIN_GRID_SIDE || cols < MIN_GRID_SIDE {
            return Err(Error::domain(format!(
                "grid shape must be at least {MIN_GRID_SIDE}×{MIN_GRID_SIDE}, got {rows}×{cols}"
            )));
        }
        let spacing = (bounds.width() / cols as f64).max(bounds.height() / rows as f64);
        let rbf_scale = rbf_scale.unwrap_or(spacing);
        if !(rbf_scale >= 0.5 * spacing && rbf_scale <= 3.0 * spacing) {
            return Err(Error::domain(format!(
                "rbf_scale {rbf_scale} must lie within 0.5–3× the grid spacing {spacing}"
            )));
        }
        Ok(ParametricEnergy {
            centers: bounds.midpoint_grid(rows, cols),
            bounds,
            rows,
            cols,
            rbf_scale,
            weights: vec![0.0; rows * cols],
        })
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rbf_scale(&self) -> f64 {
        self.rbf_scale
    }

    pub fn centers(&self) -> &[Vec2] {
        &self.centers
    }

    pub fn n_weights(&self) -> usize {
        self.weights.len()
    }

    /// Normalized basis values `ψ_k(z)` and their weighted center `Σ ψ_k c_k`.
    fn basis(&self, z: Vec2) -> (Vec<f64>, Vec2) {
        let inv = 1.0 / (2.0 * self.rbf_scale * self.rbf_scale);
        let d2: Vec<f64> = self.centers.iter().map(|c| (z - *c).norm_sq()).collect();
        let d2_min = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let mut psi: Vec<f64> = d2.iter().map(|d| (-(d - d2_min) * inv).exp()).collect();
        let total: f64 = psi.iter().sum();
        let mut mean = Vec2::ZERO;
        for (p, c) in psi.iter_mut().zip(&self.centers) {
            *p /= total;
            mean += *c * *p;
        }
        (psi, mean)
    }

    /// `∂Ê/∂w_k` gradients: `∇ψ_k(z) = ψ_k (c_k − c̄) / σ²`.
    fn basis_gradients(&self, z: Vec2) -> impl Iterator<Item = Vec2> + '_ {
        let (psi, mean) = self.basis(z);
        let inv_s2 = 1.0 / (self.rbf_scale * self.rbf_scale);
        self.centers
            .iter()
            .zip(psi)
            .map(move |(c, p)| (*c - mean) * (p * inv_s2))
    }

    /// Regression features: `predict_dd = Σ_k w_k f_k(z, v)`.
    pub fn features(&self, z: Vec2, v: Vec2) -> Vec<f64> {
        self.basis_gradients(z).map(|g| -g.dot(v)).collect()
    }

    pub fn energy(&self, z: Vec2) -> f64 {
        let (psi, _) = self.basis(z);
        psi.iter().zip(&self.weights).map(|(p, w)| p * w).sum()
    }

    pub fn log_density(&self, z: Vec2) -> f64 {
        -self.energy(z)
    }

    pub fn energy_gradient(&self, z: Vec2) -> Vec2 {
        self.basis_gradients(z)
            .zip(&self.weights)
            .fold(Vec2::ZERO, |acc, (g, w)| acc + g * *w)
    }

    /// `∇(−Ê)(z) · v`.
    pub fn predict_dd(&self, z: Vec2, v: Vec2) -> f64 {
        -self.energy_gradient(z).dot(v)
    }

    pub fn to_file(&self, meta: Option<FitMetadata>) -> ModelFile {
        ModelFile {
            bounds: self.bounds,
            shape: [self.rows, self.cols],
            rbf_scale: self.rbf_scale,
            weights: self.weights.chunks(self.cols).map(<[f64]>::to_vec).collect(),
            metadata: meta,
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let [rows, cols] = file.shape;
        let mut model = Self::new(file.bounds, (rows, cols), Some(file.rbf_scale))?;
        if file.weights.len() != rows || file.weights.iter().any(|r| r.len() != cols) {
            return Err(Error::domain("weight grid does not match shape"));
        }
        model.weights = file.weights.concat();
        Ok(model)
    }

    /// Evaluation-grid CSV with columns `x,y,log_gamma_hat`.
    pub fn write_grid_csv(&self, path: &Path, rows: usize, cols: usize) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(out, "x,y,log_gamma_hat")?;
        for z in self.bounds.midpoint_grid(rows, cols) {
            writeln!(out, "{},{},{}", fmt_f64(z.x), fmt_f64(z.y), fmt_f64(self.log_density(z)))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    ExactGradient,
    ForwardGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub bounds: Bounds,
    pub shape: [usize; 2],
    pub rbf_scale: f64,
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<FitMetadata>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub grid_shape: (usize, usize),
    pub rbf_scale: Option<f64>,
    pub optimizer: Optimizer,
    pub epochs: usize,
    /// `None` picks a step from the stability bound.
    pub step_size: Option<f64>,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            grid_shape: (12, 12),
            rbf_scale: None,
            optimizer: Optimizer::ExactGradient,
            epochs: 2000,
            step_size: None,
            batch_size: 1000,
            l2: DEFAULT_L2,
            seed: 0,
        }
    }
}

/// Quadratic form of the loss over a set of samples:
/// `L(w) = wᵀ A w − 2 bᵀ w + c + λ‖w‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    k: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    n: usize,
}

impl NormalEquations {
    fn zeros(k: usize) -> Self {
        NormalEquations {
            k,
            a: vec![0.0; k * k],
            b: vec![0.0; k],
            c: 0.0,
            n: 0,
        }
    }

    fn accumulate(model: &ParametricEnergy, samples: &[Sample]) -> Self {
        let k = model.n_weights();
        let mut s = Self::zeros(k);
        for smp in samples {
            let f = model.features(smp.z, smp.v);
            for i in 0..k {
                if f[i] == 0.0 {
                    continue;
                }
                let row = &mut s.a[i * k..(i + 1) * k];
                for (a, fj) in row.iter_mut().zip(&f) {
                    *a += f[i] * fj;
                }
                s.b[i] += f[i] * smp.r;
            }
            s.c += smp.r * smp.r;
        }
        s.n = samples.len();
        s.scale(1.0 / samples.len().max(1) as f64);
        s
    }

    fn scale(&mut self, by: f64) {
        self.a.iter_mut().for_each(|x| *x *= by);
        self.b.iter_mut().for_each(|x| *x *= by);
        self.c *= by;
    }

    /// Sample-weighted mean of per-batch statistics, summed in order.
    fn merge(parts: &[NormalEquations]) -> Self {
        let k = parts[0].k;
        let total: usize = parts.iter().map(|p| p.n).sum();
        let mut s = Self::zeros(k);
        for p in parts {
            let w = p.n as f64 / total as f64;
            s.a.iter_mut().zip(&p.a).for_each(|(x, y)| *x += w * y);
            s.b.iter_mut().zip(&p.b).for_each(|(x, y)| *x += w * y);
            s.c += w * p.c;
        }
        s.n = total;
        s
    }

    fn a_times(&self, w: &[f64]) -> Vec<f64> {
        self.a
            .chunks(self.k)
            .map(|row| row.iter().zip(w).map(|(a, x)| a * x).sum())
            .collect()
    }

    pub fn loss(&self, w: &[f64], l2: f64) -> f64 {
        let aw = self.a_times(w);
        let quad: f64 = aw.iter().zip(w).map(|(a, x)| a * x).sum();
        let lin: f64 = self.b.iter().zip(w).map(|(b, x)| b * x).sum();
        let ridge: f64 = w.iter().map(|x| x * x).sum();
        quad - 2.0 * lin + self.c + l2 * ridge
    }

    /// `∇L = 2 (A w − b) + 2 λ w`.
    pub fn gradient(&self, w: &[f64], l2: f64) -> Vec<f64> {
        self.a_times(w)
            .iter()
            .zip(&self.b)
            .zip(w)
            .map(|((aw, b), x)| 2.0 * (aw - b) + 2.0 * l2 * x)
            .collect()
    }

    /// Forward-mode directional derivative `∇L · u`, without forming `∇L`.
    pub fn directional_derivative(&self, w: &[f64], u: &[f64], l2: f64) -> f64 {
        let au = self.a_times(u);
        let wau: f64 = au.iter().zip(w).map(|(a, x)| a * x).sum();
        let bu: f64 = self.b.iter().zip(u).map(|(b, x)| b * x).sum();
        let wu: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
        2.0 * (wau - bu) + 2.0 * l2 * wu
    }

    /// Largest eigenvalue of `A + λI` by power iteration.
    pub fn max_curvature(&self, l2: f64) -> f64 {
        // a uniform start would sit in the null space of constant shifts
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x: Vec<f64> = (0..self.k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut lambda = 0.0;
        for _ in 0..200 {
            let mut y = self.a_times(&x);
            y.iter_mut().zip(&x).for_each(|(y, x)| *y += l2 * x);
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return l2;
            }
            let next = norm;
            x = y.into_iter().map(|v| v / norm).collect();
            if (next - lambda).abs() <= 1e-10 * next {
                return next;
            }
            lambda = next;
        }
        lambda
    }
}

/// Gradient descent on `L` is stable for step sizes below this value.
pub fn stability_bound(eq: &NormalEquations, l2: f64) -> f64 {
    1.0 / eq.max_curvature(l2)
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ParametricEnergy,
    pub final_loss: f64,
    /// Full-data loss after each epoch, index 0 is the initial loss.
    pub loss_curve: Vec<f64>,
    pub metadata: FitMetadata,
}

/// Per-minibatch statistics in a seeded shuffled order, plus the full-data
/// statistics used for loss reporting.
pub fn normal_equations(
    model: &ParametricEnergy,
    data: &TrajectoryDataset,
    batch_size: usize,
    seed: u64,
) -> (Vec<NormalEquations>, NormalEquations) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let shuffled: Vec<Sample> = order.iter().map(|&i| data.samples[i]).collect();
    let batches: Vec<NormalEquations> = shuffled
        .par_chunks(batch_size.max(1))
        .map(|chunk| NormalEquations::accumulate(model, chunk))
        .collect();
    let full = NormalEquations::merge(&batches);
    (batches, full)
}

pub fn fit_energy(data: &TrajectoryDataset, params: &FitParams) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::domain("cannot fit an empty dataset"));
    }
    if params.step_size.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::domain("step_size must be > 0"));
    }
    if !(params.l2 >= 0.0) {
        return Err(Error::domain("l2 must be ≥ 0"));
    }
    let mut model = ParametricEnergy::new(*data.bounds(), params.grid_shape, params.rbf_scale)?;
    let (batches, full) = normal_equations(&model, data, params.batch_size, params.seed);
    let k = model.n_weights();
    let bound = stability_bound(&full, params.l2);
    let step = params.step_size.unwrap_or(match params.optimizer {
        Optimizer::ExactGradient => 0.5 * bound,
        // the estimator's second moment is about (k + 2)‖∇L‖²
        Optimizer::ForwardGradient => 0.5 * bound / (k as f64 + 2.0),
    });
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(2);
    let mut w = vec![0.0; k];
    let mut curve = vec![full.loss(&w, params.l2)];
    for epoch in 1..=params.epochs {
        match params.optimizer {
            Optimizer::ExactGradient => {
                let g = full.gradient(&w, params.l2);
                w.iter_mut().zip(&g).for_each(|(x, g)| *x -= step * g);
            }
            Optimizer::ForwardGradient => {
                for batch in &batches {
                    let u: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let d = batch.directional_derivative(&w, &u, params.l2);
                    w.iter_mut().zip(&u).for_each(|(x, u)| *x -= step * d * u);
                }
            }
        }
        let loss = full.loss(&w, params.l2);
        if !(loss.is_finite() && loss <= DIVERGENCE_LIMIT) {
            return Err(Error::FitDiverged {
                epoch,
                loss,
                limit: DIVERGENCE_LIMIT,
                step_size: step,
            });
        }
        curve.push(loss);
    }
    model.weights = w;
    let final_loss = *curve.last().unwrap();
    Ok(FitResult {
        metadata: FitMetadata {
            optimizer: params.optimizer,
            epochs: params.epochs,
            step_size: step,
            batch_size: params.batch_size,
            l2: params.l2,
            seed: params.seed,
            n_samples: data.len(),
            final_loss,
        },
        model,
        final_loss,
        loss_curve: curve,
    })
}

pub fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "epoch,loss")?;
    for (i, l) in curve.iter().enumerate() {
        writeln!(out, "{i},{}", fmt_f64(*l))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Pearson correlation of the mean-centered fields.
    pub correlation: f64,
    /// RMSE of the true log density against the best affine map of the
    /// fitted one.
    pub rmse_affine: f64,
    pub degenerate: bool,
    pub grid: [usize; 2],
}

/// Compare `log γ̂` with `log γ(·; β)` on the midpoints of a `rows × cols`
/// grid over the model bounds.
pub fn evaluate_recovery(
    model: &ParametricEnergy,
    truth: &Landscape,
    beta: &SalienceVector,
    rows: usize,
    cols: usize,
) -> Result<RecoveryReport> {
    let grid = model.bounds().midpoint_grid(rows, cols);
    if grid.is_empty() {
        return Err(Error::domain("evaluation grid is empty"));
    }
    let pred: Vec<f64> = grid.iter().map(|z| model.log_density(*z)).collect();
    let actual = grid
        .iter()
        .map(|z| truth.log_density(*z, beta))
        .collect::<Result<Vec<f64>>>()?;
    let (correlation, rmse_affine, degenerate) = compare_fields(&pred, &actual);
    Ok(RecoveryReport {
        correlation,
        rmse_affine,
        degenerate,
        grid: [rows, cols],
    })
}

/// Correlation of centered fields and affine-aligned RMSE. A constant
/// prediction reports correlation 0 and sets the degenerate flag.
pub fn compare_fields(pred: &[f64], actual: &[f64]) -> (f64, f64, bool) {
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let ma = actual.iter().sum::<f64>() / n;
    let (mut spp, mut saa, mut spa) = (0.0, 0.0, 0.0);
    for (p, a) in pred.iter().zip(actual) {
        let (dp, da) = (p - mp, a - ma);
        spp += dp * dp;
        saa += da * da;
        spa += dp * da;
    }
    let scale = pred.iter().map(|p| p.abs()).fold(0.0, f64::max).max(1.0);
    if spp <= (1e-12 * scale).powi(2) * n {
        return (0.0, (saa / n).sqrt(), true);
    }
    let corr = if saa > 0.0 { spa / (spp * saa).sqrt() } else { 0.0 };
    let slope = spa / spp;
    let resid = (saa - slope * spa).max(0.0);
    (corr, (resid / n).sqrt(), false)
}
