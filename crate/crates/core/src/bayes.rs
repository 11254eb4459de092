//! Posterior-mean oracle for the scalar channel `y = x + e` with
//! `x ~ N(0, σ_x²)` and contaminated noise `e ~ (1 − α) N(0, σ²) + α H`.
//!
//! Splitting on the noise branch gives
//! `E[x | y] = π(y) β y + (1 − π(y)) E[x | y, H]`, where `β = σ_x²/(σ_x²+σ²)`
//! and `π(y)` is the posterior probability of the Gaussian branch. The
//! Gaussian branch is conjugate; the heavy branch is integrated numerically
//! with log-domain shifts so that `|y|` in the hundreds does not underflow.

use crate::error::{Error, Result};
use crate::noise::ContaminationSpec;
use crate::quadrature::{integrate_pieces, QuadOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Half-width, in prior standard deviations, of the integration window.
const PRIOR_SPAN: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub sigma_x: f64,
    pub noise: ContaminationSpec,
}

impl ChannelSpec {
    pub fn new(sigma_x: f64, noise: ContaminationSpec) -> Result<Self> {
        let spec = Self { sigma_x, noise };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "sigma_x must be positive, got {}",
                self.sigma_x
            )));
        }
        self.noise.validate()
    }

    /// Wiener coefficient `σ_x² / (σ_x² + σ²)`.
    pub fn beta(&self) -> f64 {
        let sx2 = self.sigma_x * self.sigma_x;
        sx2 / (sx2 + self.noise.sigma * self.noise.sigma)
    }

    /// `3 C₁ σ_x² / |y|`: bound on the heavy-branch posterior mean.
    pub fn collapse_bound(&self, y: f64) -> f64 {
        3.0 * self.noise.heavy.score_constant() * self.sigma_x * self.sigma_x / y.abs()
    }

    /// `ln f_{Y|N}(y)` for `Y ~ N(0, σ_x² + σ²)`.
    pub fn ln_gaussian_evidence(&self, y: f64) -> f64 {
        let v = self.sigma_x * self.sigma_x + self.noise.sigma * self.noise.sigma;
        -0.5 * (2.0 * PI * v).ln() - 0.5 * y * y / v
    }
}

/// Heavy-branch evidence and posterior mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyBranch {
    /// `ln f_{Y|H}(y) = ln ∫ φ_{σ_x}(x) h(y − x) dx`.
    pub ln_evidence: f64,
    /// `E[x | y, H]`.
    pub mean: f64,
    pub quad_error: f64,
}

pub fn heavy_branch(y: f64, spec: &ChannelSpec, opts: &QuadOptions) -> Result<HeavyBranch> {
    spec.validate()?;
    let sx = spec.sigma_x;
    let heavy = spec.noise.heavy;
    let ln_prior = |x: f64| -0.5 * (x / sx).powi(2) - (sx * (2.0 * PI).sqrt()).ln();
    // Shift by the log-integrand at its two candidate modes.
    let shift = (ln_prior(0.0) + heavy.ln_pdf(y)).max(ln_prior(y) + heavy.ln_pdf(0.0));
    let w = |x: f64| (ln_prior(x) + heavy.ln_pdf(y - x) - shift).exp();
    let lim = PRIOR_SPAN * sx;
    let mut pts = vec![-lim, -sx, 0.0, sx, lim];
    if y.abs() < lim {
        pts.push(y);
    }
    let z = integrate_pieces(w, &pts, opts)?;
    let num = integrate_pieces(|x| x * w(x), &pts, opts)?;
    if !(z.value > 0.0) {
        return Err(Error::QuadratureFailure(format!(
            "heavy-branch evidence vanished at y = {y}"
        )));
    }
    Ok(HeavyBranch {
        ln_evidence: z.value.ln() + shift,
        // The posterior is symmetric at y = 0; avoid quadrature round-off.
        mean: if y == 0.0 { 0.0 } else { num.value / z.value },
        quad_error: (num.error + z.error * (num.value / z.value).abs()) / z.value,
    })
}

/// `π(y) = [1 + α/(1−α) · f_{Y|H}(y) / f_{Y|N}(y)]⁻¹`.
pub fn retention_probability(y: f64, spec: &ChannelSpec) -> Result<f64> {
    retention_with(y, spec, &QuadOptions::default())
}

fn retention_with(y: f64, spec: &ChannelSpec, opts: &QuadOptions) -> Result<f64> {
    spec.validate()?;
    let a = spec.noise.alpha;
    if a == 0.0 {
        return Ok(1.0);
    }
    if a == 1.0 {
        return Ok(0.0);
    }
    let hb = heavy_branch(y, spec, opts)?;
    Ok(retention_from(a, hb.ln_evidence, spec.ln_gaussian_evidence(y)))
}

fn retention_from(alpha: f64, ln_fh: f64, ln_fn: f64) -> f64 {
    let log_odds = (alpha / (1.0 - alpha)).ln() + ln_fh - ln_fn;
    1.0 / (1.0 + log_odds.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDecomposition {
    pub y: f64,
    pub posterior_mean: f64,
    pub retention_pi: f64,
    /// `π(y) β y`.
    pub gaussian_branch: f64,
    /// `(1 − π(y)) E[x | y, H]`, i.e. `E[x|y] − π(y) β y`.
    pub residual_rho: f64,
    pub heavy_mean: f64,
    pub quad_error: f64,
}

pub fn posterior_mean_oracle(y: f64, spec: &ChannelSpec) -> Result<PosteriorDecomposition> {
    posterior_mean_with(y, spec, &QuadOptions::default())
}

pub fn posterior_mean_with(y: f64, spec: &ChannelSpec, opts: &QuadOptions) -> Result<PosteriorDecomposition> {
    spec.validate()?;
    let beta = spec.beta();
    let alpha = spec.noise.alpha;
    let (pi, heavy_mean, quad_error) = if alpha == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        let hb = heavy_branch(y, spec, opts)?;
        let pi = if alpha == 1.0 {
            0.0
        } else {
            retention_from(alpha, hb.ln_evidence, spec.ln_gaussian_evidence(y))
        };
        (pi, hb.mean, hb.quad_error)
    };
    let gaussian_branch = pi * beta * y;
    let residual_rho = (1.0 - pi) * heavy_mean;
    Ok(PosteriorDecomposition {
        y,
        posterior_mean: gaussian_branch + residual_rho,
        retention_pi: pi,
        gaussian_branch,
        residual_rho,
        heavy_mean,
        quad_error,
    })
}

/// `E[x | y]` from a single quadrature over the full mixture likelihood,
/// without the branch split. Independent cross-check of
/// [`posterior_mean_oracle`].
pub fn posterior_mean_direct(y: f64, spec: &ChannelSpec, opts: &QuadOptions) -> Result<f64> {
    spec.validate()?;
    let sx = spec.sigma_x;
    let ContaminationSpec { alpha, sigma, heavy } = spec.noise;
    let ln_gauss_noise = |t: f64| {
        if sigma == 0.0 {
            f64::NEG_INFINITY
        } else {
            -0.5 * (t / sigma).powi(2) - (sigma * (2.0 * PI).sqrt()).ln()
        }
    };
    let ln_lik = |t: f64| {
        let g = if alpha < 1.0 { (1.0 - alpha).ln() + ln_gauss_noise(t) } else { f64::NEG_INFINITY };
        let h = if alpha > 0.0 { alpha.ln() + heavy.ln_pdf(t) } else { f64::NEG_INFINITY };
        let m = g.max(h);
        m + ((g - m).exp() + (h - m).exp()).ln()
    };
    let ln_post = |x: f64| -0.5 * (x / sx).powi(2) + ln_lik(y - x);
    let lim = PRIOR_SPAN * sx;
    let beta = spec.beta();
    let mut pts = vec![-lim, 0.0, lim];
    for p in [y, beta * y] {
        if p.abs() < lim {
            pts.push(p);
        }
    }
    let shift = pts.iter().map(|&x| ln_post(x)).fold(f64::NEG_INFINITY, f64::max);
    let z = integrate_pieces(|x| (ln_post(x) - shift).exp(), &pts, opts)?;
    let num = integrate_pieces(|x| x * (ln_post(x) - shift).exp(), &pts, opts)?;
    Ok(num.value / z.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub y: f64,
    pub heavy_mean: f64,
    pub bound: f64,
    pub quad_error: f64,
    pub violated: bool,
}

/// Heavy-branch posterior mean against `3 C₁ σ_x² / |y|` on each grid point.
pub fn posterior_collapse_check(spec: &ChannelSpec, y_grid: &[f64]) -> Result<Vec<CollapseRow>> {
    let opts = QuadOptions::default();
    y_grid
        .par_iter()
        .map(|&y| {
            let hb = heavy_branch(y, spec, &opts)?;
            let bound = if y == 0.0 { f64::INFINITY } else { spec.collapse_bound(y) };
            Ok(CollapseRow {
                y,
                heavy_mean: hb.mean,
                bound,
                quad_error: hb.quad_error,
                violated: hb.mean.abs() > bound + hb.quad_error.max(opts.abs_tol),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateRow {
    pub y: f64,
    pub retention_pi: f64,
    pub bayes: f64,
    pub surrogate: f64,
    pub abs_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateProfile {
    pub tau: f64,
    pub rows: Vec<SurrogateRow>,
    pub max_abs_err: f64,
    /// τ minimizing the grid max-error, found by golden-section search.
    pub best_tau: f64,
    pub best_max_abs_err: f64,
}

/// `φ_τ(y) = β e^{−|y|/τ} y`.
pub fn surrogate(y: f64, beta: f64, tau: f64) -> f64 {
    beta * (-y.abs() / tau).exp() * y
}

pub fn surrogate_error_profile(spec: &ChannelSpec, tau: f64, y_grid: &[f64]) -> Result<SurrogateProfile> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveThreshold(tau));
    }
    let posts: Vec<PosteriorDecomposition> = y_grid
        .par_iter()
        .map(|&y| posterior_mean_oracle(y, spec))
        .collect::<Result<_>>()?;
    let beta = spec.beta();
    let max_err = |t: f64| {
        posts
            .iter()
            .map(|p| (p.posterior_mean - surrogate(p.y, beta, t)).abs())
            .fold(0.0, f64::max)
    };
    let rows: Vec<SurrogateRow> = posts
        .iter()
        .map(|p| {
            let s = surrogate(p.y, beta, tau);
            SurrogateRow {
                y: p.y,
                retention_pi: p.retention_pi,
                bayes: p.posterior_mean,
                surrogate: s,
                abs_err: (p.posterior_mean - s).abs(),
            }
        })
        .collect();
    let (best_tau, best_max_abs_err) = minimize_log_scale(max_err, 1e-3 * spec.sigma_x, 1e4 * spec.sigma_x);
    Ok(SurrogateProfile {
        tau,
        max_abs_err: max_err(tau),
        rows,
        best_tau,
        best_max_abs_err,
    })
}

/// Coarse log-spaced scan followed by golden-section refinement around the
/// best bracket.
fn minimize_log_scale(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const SCAN: usize = 64;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let at = |k: usize| llo + (lhi - llo) * k as f64 / SCAN as f64;
    let (mut best_k, mut best) = (0, f64::INFINITY);
    for k in 0..=SCAN {
        let v = f(at(k).exp());
        if v < best {
            best = v;
            best_k = k;
        }
    }
    let (mut a, mut b) = (at(best_k.saturating_sub(1)), at((best_k + 1).min(SCAN)));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d.exp());
        }
        if (b - a).abs() < 1e-10 {
            break;
        }
    }
    let (t, v) = if fc < fd { (c, fc) } else { (d, fd) };
    if v <= best {
        (t.exp(), v)
    } else {
        (at(best_k).exp(), best)
    }
}

/// Log-spaced grid of `count` points on `[lo, hi]`; the endpoints are exact.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let ratio = hi / lo;
    let last = count - 1;
    (0..count)
        .map(|k| match k {
            0 => lo,
            k if k == last => hi,
            k => lo * ratio.powf(k as f64 / last as f64),
        })
        .collect()
}
