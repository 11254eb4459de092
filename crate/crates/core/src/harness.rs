//! Gaussian random-feature regression with corrupted gradients: single
//! training runs, grid sweeps, and the speedup / spectral / subspace metrics.
//!
//! `L(W) = (1/2n)‖WA − Y‖_F²` with `Y = W♯A`. Writing `D = W − W♯` and
//! `S = AAᵀ/n`, the gradient is `DS` and the loss `½⟨D, DS⟩`.

use crate::clip::{ClipKind, ClipSpec};
use crate::error::{Error, Result};
use crate::io::{CsvTable, Field};
use crate::linalg::{full_svd, msign, MsignMethod, DEFAULT_GAP_TOL};
use crate::localization::median;
use crate::matrix::Matrix;
use crate::noise::{gaussian_matrix, ContaminationSpec, HeavyTail, SeedSpec};
use crate::optim::ScaleMode;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Losses above this count as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e30;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    pub w_star: Matrix,
    pub a: Matrix,
    pub y: Matrix,
    gram: Matrix,
}

/// `W♯` comes from ChaCha stream 0 and `A` from stream `u64::MAX`, disjoint
/// from the per-cell noise streams.
pub fn make_problem(d_out: usize, d_h: usize, n: usize, seed: u64) -> Result<RegressionProblem> {
    if d_out == 0 || d_h == 0 || n == 0 {
        return Err(Error::InvalidSpec("problem dimensions must be positive".into()));
    }
    let w_star = gaussian_matrix(d_out, d_h, SeedSpec::new(seed, 0));
    let a = gaussian_matrix(d_h, n, SeedSpec::new(seed, 0).with_stream(u64::MAX));
    let y = w_star.matmul(&a)?;
    let gram = a.matmul(&a.transpose())?.scale(1.0 / n as f64);
    Ok(RegressionProblem { w_star, a, y, gram })
}

impl RegressionProblem {
    pub fn shape(&self) -> (usize, usize) {
        self.w_star.shape()
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    fn check(&self, w: &Matrix) -> Result<()> {
        if w.shape() != self.w_star.shape() {
            return Err(Error::ShapeMismatch {
                left: w.shape(),
                right: self.w_star.shape(),
            });
        }
        Ok(())
    }

    /// `(1/2n)‖WA − Y‖_F²`.
    pub fn loss(&self, w: &Matrix) -> Result<f64> {
        self.check(w)?;
        let r = w.matmul(&self.a)?.sub(&self.y)?;
        Ok(0.5 * r.inner(&r)? / self.n() as f64)
    }
}

/// `(1/n)(WA − Y)Aᵀ`.
pub fn true_gradient(w: &Matrix, problem: &RegressionProblem) -> Result<Matrix> {
    problem.check(w)?;
    let r = w.matmul(&problem.a)?.sub(&problem.y)?;
    Ok(r.matmul(&problem.a.transpose())?.scale(1.0 / problem.n() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gd,
    SpectralGd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::SpectralGd => "spectral_gd",
        }
    }

    /// Post-clipping for GD, pre-clipping for spectral GD.
    pub fn stage(self) -> &'static str {
        match self {
            Method::Gd => "post",
            Method::SpectralGd => "pre",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipChoice {
    None,
    Hard,
    Smooth,
}

impl ClipChoice {
    pub fn name(self) -> &'static str {
        match self {
            ClipChoice::None => "none",
            ClipChoice::Hard => "hard",
            ClipChoice::Smooth => "smooth",
        }
    }

    pub fn kind(self) -> ClipKind {
        match self {
            ClipChoice::None => ClipKind::None,
            ClipChoice::Hard => ClipKind::HardCoordinate,
            ClipChoice::Smooth => ClipKind::SmoothShrinkage,
        }
    }
}

fn default_sigma() -> f64 {
    1.0
}

fn default_heavy() -> HeavyTail {
    HeavyTail::StudentT { nu: 1.0, scale: 3.0 }
}

fn default_steps() -> usize {
    500
}

fn default_scale_mode() -> ScaleMode {
    ScaleMode::Dims
}

fn default_subspace_k() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub clip: ClipChoice,
    pub lr: f64,
    /// Per-step quantile of `|G̃_ij|` used as `τ` (hard) or `c` (smooth);
    /// ignored without clipping.
    pub quantile: f64,
    pub alpha: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_heavy")]
    pub heavy: HeavyTail,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Spectral GD step scale.
    #[serde(default = "default_scale_mode")]
    pub scale_mode: ScaleMode,
    #[serde(default)]
    pub msign: MsignMethod,
    /// Record spectral and subspace metrics at every step, not just the last.
    #[serde(default)]
    pub track_spectrum: bool,
    #[serde(default = "default_subspace_k")]
    pub subspace_k: usize,
}

impl RunConfig {
    pub fn new(method: Method, clip: ClipChoice, lr: f64, quantile: f64, alpha: f64) -> Self {
        Self {
            method,
            clip,
            lr,
            quantile,
            alpha,
            sigma: default_sigma(),
            heavy: default_heavy(),
            steps: default_steps(),
            scale_mode: default_scale_mode(),
            msign: MsignMethod::ExactSvd,
            track_spectrum: false,
            subspace_k: default_subspace_k(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidSpec(what));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.clip != ClipChoice::None && !(self.quantile > 0.0 && self.quantile < 1.0) {
            return bad(format!("quantile must lie in (0, 1), got {}", self.quantile));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.subspace_k == 0 {
            return bad("subspace_k must be at least 1".into());
        }
        self.noise().validate()
    }

    pub fn noise(&self) -> ContaminationSpec {
        ContaminationSpec {
            alpha: self.alpha,
            sigma: self.sigma,
            heavy: self.heavy,
        }
    }

    pub fn clip_spec(&self) -> ClipSpec {
        match self.clip {
            ClipChoice::None => ClipSpec::none(),
            c => ClipSpec::quantile(c.kind(), self.quantile),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Loss after each step.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub diverged: bool,
    /// `|σ₁(φ(G̃_k)) − σ₁(∇L(W_k))|`; empty unless tracked.
    pub spectral_error_curve: Vec<f64>,
    /// Largest principal angle between top-k left singular subspaces of
    /// `φ(G̃_k)` and `∇L(W_k)`; empty unless tracked.
    pub subspace_recovery_curve: Vec<f64>,
    pub spectral_err_final: f64,
    pub subspace_angle_final: f64,
    pub wall_time: f64,
}

fn add_noise(grad: &Matrix, noise: &ContaminationSpec, rng: &mut ChaCha20Rng, buf: &mut Matrix) {
    for (b, g) in buf.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *b = g + noise.sample(rng);
    }
}

fn spectral_metrics(processed: &Matrix, grad: &Matrix, k: usize) -> (f64, f64) {
    let s1 = |a: &Matrix| full_svd(a).map(|s| s.singular_values[0]);
    let err = match (s1(processed), s1(grad)) {
        (Ok(a), Ok(b)) => (a - b).abs(),
        _ => f64::NAN,
    };
    let angle = subspace_recovery(processed, grad, k).unwrap_or(f64::NAN);
    (err, angle)
}

/// One trajectory from `W₀ = 0`, with noise drawn fresh each step from
/// `noise_seed`. A non-finite or exploding loss ends the run as diverged;
/// the rest of the curve is filled with `inf`.
pub fn run_training(problem: &RegressionProblem, cfg: &RunConfig, noise_seed: SeedSpec) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let (m, n) = problem.shape();
    let noise = cfg.noise();
    let phi = cfg.clip_spec();
    let mut rng = noise_seed.rng();
    let step_scale = match cfg.method {
        Method::Gd => 1.0,
        Method::SpectralGd => cfg.scale_mode.factor(m, n),
    };

    let mut d = problem.w_star.scale(-1.0);
    let mut grad = d.matmul(&problem.gram)?;
    let mut noisy = Matrix::zeros(m, n);
    let mut out = RunResult {
        loss_curve: Vec::with_capacity(cfg.steps),
        final_loss: f64::NAN,
        diverged: false,
        spectral_error_curve: Vec::new(),
        subspace_recovery_curve: Vec::new(),
        spectral_err_final: f64::NAN,
        subspace_angle_final: f64::NAN,
        wall_time: 0.0,
    };
    for k in 0..cfg.steps {
        add_noise(&grad, &noise, &mut rng, &mut noisy);
        let processed = phi.apply(&noisy)?;
        if cfg.track_spectrum || k + 1 == cfg.steps {
            let (err, angle) = spectral_metrics(&processed, &grad, cfg.subspace_k);
            if cfg.track_spectrum {
                out.spectral_error_curve.push(err);
                out.subspace_recovery_curve.push(angle);
            }
            out.spectral_err_final = err;
            out.subspace_angle_final = angle;
        }
        match cfg.method {
            Method::Gd => d.axpy(-cfg.lr, &processed)?,
            Method::SpectralGd => d.axpy(-cfg.lr * step_scale, &msign(&processed, cfg.msign)?)?,
        }
        grad = d.matmul(&problem.gram)?;
        let loss = 0.5 * d.inner(&grad)?;
        if !(loss <= DIVERGENCE_LOSS) {
            out.diverged = true;
            out.loss_curve.resize(cfg.steps, f64::INFINITY);
            break;
        }
        out.loss_curve.push(loss);
    }
    out.final_loss = *out.loss_curve.last().expect("steps >= 1");
    if out.diverged && cfg.track_spectrum {
        out.spectral_error_curve.resize(cfg.steps, f64::NAN);
        out.subspace_recovery_curve.resize(cfg.steps, f64::NAN);
    }
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Largest principal angle (radians) between the spans of the top-`k` left
/// singular vectors, computed as `atan2(‖(I − UUᵀ)Û‖_op, σ_min(UᵀÛ))`.
pub fn subspace_recovery(g_clipped: &Matrix, g_true: &Matrix, k: usize) -> Result<f64> {
    if g_clipped.shape() != g_true.shape() {
        return Err(Error::ShapeMismatch {
            left: g_clipped.shape(),
            right: g_true.shape(),
        });
    }
    let r = g_true.min_dim();
    if k == 0 || k > r {
        return Err(Error::InvalidSpec(format!("subspace dimension k = {k} must lie in [1, {r}]")));
    }
    if g_clipped.is_zero() || g_true.is_zero() {
        return Err(Error::ZeroMatrix);
    }
    let m = g_true.rows();
    let top = |a: &Matrix| -> Result<Matrix> {
        let svd = full_svd(a)?;
        let s = &svd.singular_values;
        if k < s.len() && s[k - 1] - s[k] <= DEFAULT_GAP_TOL * s[0] {
            return Err(Error::DegenerateSpectrum {
                sigma1: s[k - 1],
                sigma2: s[k],
            });
        }
        Ok(Matrix::from_fn(m, k, |i, j| svd.u[(i, j)]))
    };
    let u = top(g_true)?;
    let uh = top(g_clipped)?;
    let c = u.transpose().matmul(&uh)?;
    let p = uh.sub(&u.matmul(&c)?)?;
    let cos = *full_svd(&c)?.singular_values.last().expect("k >= 1");
    let sin = if p.is_zero() { 0.0 } else { full_svd(&p)?.singular_values[0] };
    Ok(sin.atan2(cos))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub value: f64,
    /// Interpolated step at which the method reaches the baseline target.
    pub steps_to_target: Option<f64>,
    pub baseline_steps: f64,
    pub reached: bool,
}

/// First (interpolated, 1-based) step at which `curve` drops to `target`.
pub fn steps_to_reach(curve: &[f64], target: f64) -> Option<f64> {
    let i = curve.iter().position(|&v| v <= target)?;
    if i == 0 {
        return Some(1.0);
    }
    let (prev, cur) = (curve[i - 1], curve[i]);
    if !prev.is_finite() || prev == cur {
        return Some(i as f64 + 1.0);
    }
    Some(i as f64 + (prev - target) / (prev - cur))
}

/// Steps for the baseline to reach its own final loss over steps for the
/// method to reach it. The target is the baseline's final loss, or its best
/// finite loss if it diverged. When the method never reaches the target the
/// value falls back to `target / method_final` (< 1) and `reached` is false.
pub fn speedup_metric(baseline_curve: &[f64], method_curve: &[f64]) -> Speedup {
    let finite_min = baseline_curve.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let target = match baseline_curve.last() {
        Some(&v) if v.is_finite() => v,
        _ => finite_min,
    };
    let unreachable = Speedup {
        value: f64::NAN,
        steps_to_target: None,
        baseline_steps: f64::NAN,
        reached: false,
    };
    if !target.is_finite() {
        return unreachable;
    }
    let baseline_steps = steps_to_reach(baseline_curve, target).expect("target lies on the curve");
    match steps_to_reach(method_curve, target) {
        Some(t) => Speedup {
            value: baseline_steps / t,
            steps_to_target: Some(t),
            baseline_steps,
            reached: true,
        },
        None => {
            let last = method_curve.last().copied().unwrap_or(f64::INFINITY);
            Speedup {
                value: if last.is_finite() && last > 0.0 { target / last } else { 0.0 },
                steps_to_target: None,
                baseline_steps,
                reached: false,
            }
        }
    }
}

pub const PAPER_ALPHAS: [f64; 8] = [0.0, 1e-3, 1e-2, 5e-2, 1e-1, 0.5, 0.8, 1.0];
pub const PAPER_LRS: [f64; 6] = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1];
pub const PAPER_QUANTILES: [f64; 7] = [0.90, 0.95, 0.99, 0.995, 0.999, 0.9995, 0.99999];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub d_out: usize,
    pub d_h: usize,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub clips: Vec<ClipChoice>,
    pub alphas: Vec<f64>,
    pub lrs: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub sigma: f64,
    pub heavy: HeavyTail,
    pub steps: usize,
    pub scale_mode: ScaleMode,
    pub msign: MsignMethod,
    pub track_spectrum: bool,
    pub subspace_k: usize,
    /// Keep per-run loss curves for plot data.
    pub keep_curves: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            d_out: 32,
            d_h: 32,
            n: 128,
            seeds: (0..10).collect(),
            methods: vec![Method::Gd, Method::SpectralGd],
            clips: vec![ClipChoice::None, ClipChoice::Hard, ClipChoice::Smooth],
            alphas: PAPER_ALPHAS.to_vec(),
            lrs: PAPER_LRS.to_vec(),
            quantiles: PAPER_QUANTILES.to_vec(),
            sigma: default_sigma(),
            heavy: default_heavy(),
            steps: default_steps(),
            scale_mode: default_scale_mode(),
            msign: MsignMethod::ExactSvd,
            track_spectrum: false,
            subspace_k: default_subspace_k(),
            keep_curves: false,
        }
    }
}

/// One point of the sweep grid; `quantile` is `None` without clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub method: Method,
    pub clip: ClipChoice,
    pub alpha: f64,
    pub lr: f64,
    pub quantile: Option<f64>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidSpec(what.to_string()));
        if self.seeds.is_empty()
            || self.methods.is_empty()
            || self.clips.is_empty()
            || self.alphas.is_empty()
            || self.lrs.is_empty()
        {
            return bad("sweep grids must be non-empty");
        }
        if self.clips.iter().any(|c| *c != ClipChoice::None) && self.quantiles.is_empty() {
            return bad("clipped cells need at least one quantile");
        }
        if self.d_out == 0 || self.d_h == 0 || self.n == 0 {
            return bad("problem dimensions must be positive");
        }
        for cell in self.cells() {
            self.run_config(&cell).validate()?;
        }
        Ok(())
    }

    /// Grid in canonical order: method, α, clip, lr, quantile.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &alpha in &self.alphas {
                for &clip in &self.clips {
                    for &lr in &self.lrs {
                        let qs: Vec<Option<f64>> = if clip == ClipChoice::None {
                            vec![None]
                        } else {
                            self.quantiles.iter().map(|&q| Some(q)).collect()
                        };
                        for quantile in qs {
                            out.push(Cell {
                                index: out.len(),
                                method,
                                clip,
                                alpha,
                                lr,
                                quantile,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn run_config(&self, cell: &Cell) -> RunConfig {
        RunConfig {
            sigma: self.sigma,
            heavy: self.heavy,
            steps: self.steps,
            scale_mode: self.scale_mode,
            msign: self.msign,
            track_spectrum: self.track_spectrum,
            subspace_k: self.subspace_k,
            ..RunConfig::new(cell.method, cell.clip, cell.lr, cell.quantile.unwrap_or(0.5), cell.alpha)
        }
    }

    /// Noise for a run: ChaCha stream `1 + cell index` under the seed, so
    /// every cell has a disjoint stream and results do not depend on
    /// scheduling.
    pub fn noise_seed(cell: &Cell, seed: u64) -> SeedSpec {
        SeedSpec::new(seed, 1 + cell.index as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub cell: Cell,
    pub seed: u64,
    pub final_loss: f64,
    pub diverged: bool,
    pub steps_to_target: Option<f64>,
    pub speedup: f64,
    pub reached: bool,
    pub spectral_err_final: f64,
    pub subspace_angle_final: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub method: Method,
    pub clip: ClipChoice,
    pub alpha: f64,
    pub best_lr: f64,
    pub best_quantile: Option<f64>,
    pub median_final_loss: f64,
    pub median_speedup: f64,
    pub reached_fraction: f64,
    pub diverged_fraction: f64,
    pub median_spectral_err_final: f64,
    pub median_subspace_angle_final: f64,
    /// Index of the winning cell.
    pub cell_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<Cell>,
    /// Rows in cell-major, seed-minor order.
    pub rows: Vec<RunRow>,
    pub best: Vec<BestRow>,
    /// Per-step median loss over seeds for each best cell (same order as
    /// `best`); empty unless `keep_curves`.
    pub best_curves: Vec<Vec<f64>>,
}

fn median_of(xs: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = xs.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    median(&mut v)
}

fn median_curve(curves: &[&Vec<f64>]) -> Vec<f64> {
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..len).map(|t| median_of(curves.iter().map(|c| c[t]))).collect()
}

/// Runs every cell × seed (in parallel), then reduces: per (method, α) the
/// unclipped cell with the lowest median final loss is the speedup baseline;
/// per (method, clip, α) the cell with the lowest median final loss is best.
pub fn grid_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let problems: Vec<RegressionProblem> = cfg
        .seeds
        .iter()
        .map(|&s| make_problem(cfg.d_out, cfg.d_h, cfg.n, s))
        .collect::<Result<_>>()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.seeds.len()).map(move |s| (c, s)))
        .collect();
    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let cell = &cells[c];
            run_training(&problems[s], &cfg.run_config(cell), SweepConfig::noise_seed(cell, cfg.seeds[s]))
        })
        .collect::<Result<_>>()?;
    let ns = cfg.seeds.len();
    let run = |c: usize, s: usize| &results[c * ns + s];
    let cell_median = |c: usize| median_of((0..ns).map(|s| run(c, s).final_loss));

    // Winning cell per group, ties to the earliest cell.
    let best_cell = |pred: &dyn Fn(&Cell) -> bool| -> Option<usize> {
        cells
            .iter()
            .filter(|c| pred(c))
            .map(|c| (c.index, cell_median(c.index)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    };

    let mut rows = Vec::with_capacity(jobs.len());
    for cell in &cells {
        let baseline =
            best_cell(&|c: &Cell| c.method == cell.method && c.alpha == cell.alpha && c.clip == ClipChoice::None);
        for (s, &seed) in cfg.seeds.iter().enumerate() {
            let r = run(cell.index, s);
            let sp = baseline.map(|b| speedup_metric(&run(b, s).loss_curve, &r.loss_curve));
            rows.push(RunRow {
                cell: *cell,
                seed,
                final_loss: r.final_loss,
                diverged: r.diverged,
                steps_to_target: sp.and_then(|p| p.steps_to_target),
                speedup: sp.map_or(f64::NAN, |p| p.value),
                reached: sp.is_some_and(|p| p.reached),
                spectral_err_final: r.spectral_err_final,
                subspace_angle_final: r.subspace_angle_final,
                wall_time: r.wall_time,
            });
        }
    }

    let mut best = Vec::new();
    let mut best_curves = Vec::new();
    for &method in &cfg.methods {
        for &clip in &cfg.clips {
            for &alpha in &cfg.alphas {
                let Some(b) = best_cell(&|c: &Cell| c.method == method && c.clip == clip && c.alpha == alpha) else {
                    continue;
                };
                let cell_rows = &rows[b * ns..(b + 1) * ns];
                let frac = |f: &dyn Fn(&RunRow) -> bool| cell_rows.iter().filter(|r| f(r)).count() as f64 / ns as f64;
                best.push(BestRow {
                    method,
                    clip,
                    alpha,
                    best_lr: cells[b].lr,
                    best_quantile: cells[b].quantile,
                    median_final_loss: cell_median(b),
                    median_speedup: median_of(cell_rows.iter().map(|r| r.speedup)),
                    reached_fraction: frac(&|r| r.reached),
                    diverged_fraction: frac(&|r| r.diverged),
                    median_spectral_err_final: median_of(cell_rows.iter().map(|r| r.spectral_err_final)),
                    median_subspace_angle_final: median_of(cell_rows.iter().map(|r| r.subspace_angle_final)),
                    cell_index: b,
                });
                if cfg.keep_curves {
                    let curves: Vec<&Vec<f64>> = (0..ns).map(|s| &run(b, s).loss_curve).collect();
                    best_curves.push(median_curve(&curves));
                }
            }
        }
    }
    Ok(SweepResult {
        cells,
        rows,
        best,
        best_curves,
    })
}

impl SweepResult {
    pub fn best_for(&self, method: Method, clip: ClipChoice, alpha: f64) -> Option<&BestRow> {
        self.best
            .iter()
            .find(|b| b.method == method && b.clip == clip && b.alpha == alpha)
    }

    /// Deterministic per-run table (no timing columns).
    pub fn results_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "method",
            "clip",
            "stage",
            "alpha",
            "lr",
            "quantile",
            "seed",
            "final_loss",
            "diverged",
            "steps_to_target",
            "speedup",
            "spectral_err_final",
            "subspace_angle_final",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.cell.method.name().into(),
                r.cell.clip.name().into(),
                r.cell.method.stage().into(),
                r.cell.alpha.into(),
                r.cell.lr.into(),
                r.cell.quantile.into(),
                r.seed.into(),
                r.final_loss.into(),
                r.diverged.into(),
                r.steps_to_target.into(),
                r.speedup.into(),
                r.spectral_err_final.into(),
                r.subspace_angle_final.into(),
            ]);
        }
        t
    }

    /// Wall-clock seconds per run, kept apart so the results table stays
    /// byte-reproducible.
    pub fn timings_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["method", "clip", "alpha", "lr", "quantile", "seed", "wall_time_s"]);
        for r in &self.rows {
            t.push(vec![
                r.cell.method.name().into(),
                r.cell.clip.name().into(),
                r.cell.alpha.into(),
                r.cell.lr.into(),
                r.cell.quantile.into(),
                r.seed.into(),
                r.wall_time.into(),
            ]);
        }
        t
    }

    pub fn best_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "method",
            "clip",
            "stage",
            "alpha",
            "best_lr",
            "best_quantile",
            "median_final_loss",
            "median_speedup",
            "reached_fraction",
            "diverged_fraction",
            "median_spectral_err_final",
            "median_subspace_angle_final",
        ]);
        for b in &self.best {
            t.push(vec![
                b.method.name().into(),
                b.clip.name().into(),
                b.method.stage().into(),
                b.alpha.into(),
                b.best_lr.into(),
                b.best_quantile.into(),
                b.median_final_loss.into(),
                b.median_speedup.into(),
                b.reached_fraction.into(),
                b.diverged_fraction.into(),
                b.median_spectral_err_final.into(),
                b.median_subspace_angle_final.into(),
            ]);
        }
        t
    }

    /// Long-format median loss curves of the best cells.
    pub fn curves_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["method", "clip", "alpha", "step", "median_loss"]);
        for (b, curve) in self.best.iter().zip(&self.best_curves) {
            for (k, v) in curve.iter().enumerate() {
                t.push(vec![
                    b.method.name().into(),
                    b.clip.name().into(),
                    b.alpha.into(),
                    Field::Int(k as i64 + 1),
                    (*v).into(),
                ]);
            }
        }
        t
    }
}

/// Uniform draw used by tests and benches that need a random direction.
pub fn random_direction(m: usize, n: usize, seed: SeedSpec) -> Matrix {
    let mut rng = seed.rng();
    Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
}
