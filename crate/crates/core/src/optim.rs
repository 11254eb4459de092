//! Clipped optimizer updates, theorem-prescribed thresholds and step sizes,
//! and scalar oracles for the relative-bias and variance constants.
//!
//! Post-clipping steps `X ← X − η φ(G + Ξ)`; pre-clipping averages `N`
//! clipped samples and steps along their matrix sign.

use crate::clip::{hard_clip_scalar, smooth_shrink_derivative, smooth_shrink_scalar, ClipSpec};
use crate::error::{Error, Result};
use crate::linalg::{msign, MsignMethod};
use crate::matrix::Matrix;
use crate::noise::{ContaminationSpec, HeavyTail};
use crate::quadrature::{integrate_pieces, QuadOptions};
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

/// `Φ̄(t) = P(N(0,1) ≥ t)`.
pub fn normal_sf(t: f64) -> f64 {
    0.5 * libm::erfc(t / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremConstants {
    /// Bound on `‖G_k‖_∞`.
    pub b: f64,
    /// Smoothness constant.
    pub l: f64,
    /// Initial suboptimality `f(X₀) − inf f`.
    pub delta: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub m: usize,
    pub n: usize,
}

impl TheoremConstants {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConstants(what.to_string()));
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return bad("B must be finite and non-negative");
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return bad("L must be positive");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("Delta must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if self.m == 0 || self.n == 0 {
            return bad("dimensions must be positive");
        }
        Ok(())
    }

    /// `d = mn`.
    pub fn d(&self) -> usize {
        self.m * self.n
    }

    /// `r = min(m, n)`.
    pub fn r(&self) -> usize {
        self.m.min(self.n)
    }

    /// `q = max(m, n)`.
    pub fn q(&self) -> usize {
        self.m.max(self.n)
    }

    /// `D = √(q/r)`.
    pub fn dim_ratio(&self) -> f64 {
        (self.q() as f64 / self.r() as f64).sqrt()
    }

    /// Noise model the bounds are stated for: Cauchy contamination.
    pub fn noise(&self) -> ContaminationSpec {
        ContaminationSpec {
            alpha: self.alpha,
            sigma: self.sigma,
            heavy: HeavyTail::Cauchy { gamma: self.gamma },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    PostHard,
    PostSmooth,
    PreHard,
    PreSmooth,
}

impl ThresholdKind {
    pub const ALL: [ThresholdKind; 4] = [
        ThresholdKind::PostHard,
        ThresholdKind::PostSmooth,
        ThresholdKind::PreHard,
        ThresholdKind::PreSmooth,
    ];

    pub fn is_pre(self) -> bool {
        matches!(self, ThresholdKind::PreHard | ThresholdKind::PreSmooth)
    }

    pub fn is_hard(self) -> bool {
        matches!(self, ThresholdKind::PostHard | ThresholdKind::PreHard)
    }

    pub fn map(self, threshold: f64) -> ScalarMap {
        if self.is_hard() {
            ScalarMap::Hard { tau: threshold }
        } else {
            ScalarMap::Smooth { c: threshold }
        }
    }

    /// Largest `ρ` the threshold is designed to guarantee.
    pub fn rho_target(self, r: usize) -> f64 {
        if self.is_pre() {
            1.0 / (4.0 * (r as f64).sqrt())
        } else {
            0.5
        }
    }
}

/// Minimal admissible threshold (`τ` or `c`).
pub fn threshold(kind: ThresholdKind, tc: &TheoremConstants) -> Result<f64> {
    tc.validate()?;
    let TheoremConstants {
        b,
        alpha,
        sigma,
        gamma,
        ..
    } = *tc;
    let sr = (tc.r() as f64).sqrt();
    let gauss_shift = b + (8.0 / PI).sqrt() * (1.0 - alpha) * sigma;
    let t = match kind {
        ThresholdKind::PostHard => b + (sigma * (2.0 * 8f64.ln()).sqrt()).max(8.0 * alpha * gamma / PI),
        ThresholdKind::PostSmooth => {
            let k = 64.0 * alpha / PI;
            (4.0 * gauss_shift).max(gamma * k * (E + k).ln())
        }
        ThresholdKind::PreHard => {
            b + (sigma * (2.0 * (16.0 * sr).ln()).sqrt()).max(16.0 * alpha * gamma * sr / PI)
        }
        ThresholdKind::PreSmooth => {
            let k = 128.0 * alpha * sr / PI;
            (8.0 * sr * gauss_shift).max(gamma * k * (E + k).ln())
        }
    };
    if !(t > 0.0) || (kind.is_hard() && t <= b) {
        return Err(Error::InvalidConstants(format!(
            "{kind:?} threshold {t} is degenerate (noise-free with B = {b})"
        )));
    }
    Ok(t)
}

/// Entry-wise map with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "map")]
pub enum ScalarMap {
    Hard { tau: f64 },
    Smooth { c: f64 },
}

impl ScalarMap {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            ScalarMap::Hard { tau } => hard_clip_scalar(x, tau),
            ScalarMap::Smooth { c } => smooth_shrink_scalar(x, c),
        }
    }

    pub fn threshold(&self) -> f64 {
        match *self {
            ScalarMap::Hard { tau } => tau,
            ScalarMap::Smooth { c } => c,
        }
    }

    /// `sup |φ|`: `τ` for hard clipping, `c/e` for smooth shrinkage.
    pub fn sup_norm(&self) -> f64 {
        match *self {
            ScalarMap::Hard { tau } => tau,
            ScalarMap::Smooth { c } => c / E,
        }
    }

    fn validate(&self) -> Result<()> {
        let t = self.threshold();
        if t > 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(Error::NonPositiveThreshold(t))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceBounds {
    pub rho: f64,
    pub v: f64,
}

/// Closed-form `ρ` and `v` for Cauchy contamination.
pub fn bias_variance_bounds(map: ScalarMap, tc: &TheoremConstants) -> Result<BiasVarianceBounds> {
    tc.validate()?;
    map.validate()?;
    let TheoremConstants {
        b,
        alpha,
        sigma,
        gamma,
        ..
    } = *tc;
    Ok(match map {
        ScalarMap::Hard { tau } => {
            if tau <= b {
                return Err(Error::ThresholdBelowB { tau, bound: b });
            }
            let gauss = if sigma == 0.0 {
                0.0
            } else {
                2.0 * (1.0 - alpha) * normal_sf((tau - b) / sigma)
            };
            BiasVarianceBounds {
                rho: gauss + alpha * gamma / PI * (1.0 / (tau - b) + 1.0 / (tau + b)),
                v: (1.0 - alpha) * sigma * sigma + 4.0 * alpha * gamma * tau / PI,
            }
        }
        ScalarMap::Smooth { c } => BiasVarianceBounds {
            rho: (b + (8.0 / PI).sqrt() * (1.0 - alpha) * sigma) / c
                + 8.0 * alpha * gamma / (PI * c) * (E + c / gamma).ln(),
            v: (1.0 - alpha) * sigma * sigma + 8.0 * alpha * gamma * c / (PI * E),
        },
    })
}

/// First two moments of `φ(g + ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessedMoments {
    /// `m_φ(g) = E φ(g + ξ)`.
    pub mean: f64,
    pub variance: f64,
}

/// `∫₀^∞ [f(g + h) + f(g − h)] p(h) dh` for a symmetric density `p`.
fn symmetric_expectation(
    f: impl Fn(f64) -> f64,
    g: f64,
    pdf: impl Fn(f64) -> f64,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<f64> {
    let mut pts = vec![0.0, f64::INFINITY];
    pts.extend(breaks.iter().copied().filter(|p| p.is_finite() && *p > 0.0));
    Ok(integrate_pieces(|h| (f(g + h) + f(g - h)) * pdf(h), &pts, opts)?.value)
}

fn branch_moments(
    map: ScalarMap,
    g: f64,
    pdf: impl Fn(f64) -> f64 + Copy,
    scale: f64,
    opts: &QuadOptions,
) -> Result<(f64, f64)> {
    let t = map.threshold();
    let ga = g.abs();
    let breaks = [scale, 5.0 * scale, (t - ga).abs(), t + ga, ga, 5.0 * t, 40.0 * t];
    let m1 = symmetric_expectation(|x| map.apply(x), g, pdf, &breaks, opts)?;
    let m2 = symmetric_expectation(|x| map.apply(x).powi(2), g, pdf, &breaks, opts)?;
    Ok((m1, m2))
}

/// `m_φ(g)` and `Var φ(g + ξ)` by quadrature, branch by branch.
pub fn processed_moments(map: ScalarMap, g: f64, noise: &ContaminationSpec) -> Result<ProcessedMoments> {
    processed_moments_with(map, g, noise, &QuadOptions::default())
}

pub fn processed_moments_with(
    map: ScalarMap,
    g: f64,
    noise: &ContaminationSpec,
    opts: &QuadOptions,
) -> Result<ProcessedMoments> {
    noise.validate()?;
    map.validate()?;
    let ContaminationSpec { alpha, sigma, heavy } = *noise;
    let (g1, g2) = if alpha == 1.0 {
        (0.0, 0.0)
    } else if sigma == 0.0 {
        let y = map.apply(g);
        (y, y * y)
    } else {
        branch_moments(map, g, |h| normal_pdf(h, sigma), sigma, opts)?
    };
    let (h1, h2) = if alpha == 0.0 {
        (0.0, 0.0)
    } else {
        let scale = match heavy {
            HeavyTail::Cauchy { gamma } => gamma,
            HeavyTail::StudentT { scale, .. } => scale,
        };
        branch_moments(map, g, |h| heavy.pdf(h), scale, opts)?
    };
    let mean = (1.0 - alpha) * g1 + alpha * h1;
    let second = (1.0 - alpha) * g2 + alpha * h2;
    Ok(ProcessedMoments {
        mean,
        variance: (second - mean * mean).max(0.0),
    })
}

/// `m_φ(g) = E φ(g + ξ)`.
pub fn relative_bias_oracle(map: ScalarMap, g: f64, noise: &ContaminationSpec) -> Result<f64> {
    if g == 0.0 {
        // Odd map, symmetric noise.
        map.validate()?;
        noise.validate()?;
        return Ok(0.0);
    }
    Ok(processed_moments(map, g, noise)?.mean)
}

/// Smooth-shrinkage derivative deficits `1 − E S_c'(Z)` (Gaussian, σ) and
/// `1 − E S_c'(H)` (Cauchy, γ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeDeficits {
    pub gaussian: f64,
    pub gaussian_bound: f64,
    pub cauchy: f64,
    pub cauchy_bound: f64,
}

pub fn derivative_deficits(c: f64, sigma: f64, gamma: f64) -> Result<DerivativeDeficits> {
    if !(c > 0.0) {
        return Err(Error::NonPositiveThreshold(c));
    }
    if !(sigma > 0.0 && gamma > 0.0) {
        return Err(Error::InvalidConstants("sigma and gamma must be positive".into()));
    }
    let opts = QuadOptions::default();
    let deficit = |u: f64| 1.0 - smooth_shrink_derivative(u, c);
    let gpts = [0.0, sigma, c, 5.0 * sigma, f64::INFINITY];
    let gaussian = 2.0 * integrate_pieces(|u| deficit(u) * normal_pdf(u, sigma), &gpts, &opts)?.value;
    let cpts = [0.0, gamma, c, 10.0 * c, f64::INFINITY];
    let cauchy = 2.0
        * integrate_pieces(|u| deficit(u) * gamma / (PI * (gamma * gamma + u * u)), &cpts, &opts)?.value;
    Ok(DerivativeDeficits {
        gaussian,
        gaussian_bound: (8.0 / PI).sqrt() * sigma / c,
        cauchy,
        cauchy_bound: 8.0 * gamma / (PI * c) * (E + c / gamma).ln(),
    })
}

/// `true` iff `x ≥ 2sa·log(e + 2sa)` and `a·log(e + x) ≤ x/s`.
///
/// The conclusion is tested in the multiplied form `s·a·log(e + x) ≤ x` so
/// `x = 0` (possible when `a = 0`) is well defined.
pub fn log_device_check(a: f64, s: f64, x: f64) -> bool {
    log_device_premise(a, s, x) && s * a * (E + x).ln() <= x * (1.0 + 1e-12)
}

pub fn log_device_premise(a: f64, s: f64, x: f64) -> bool {
    let k = 2.0 * s * a;
    a >= 0.0 && s >= 1.0 && x >= k * (E + k).ln()
}

fn check_eta(eta: f64) -> Result<()> {
    if eta >= 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConstants(format!("eta must be non-negative, got {eta}")))
    }
}

/// `X − η φ(G + Ξ)`.
pub fn post_clip_step(x: &Matrix, grad_sample: &Matrix, phi: &ClipSpec, eta: f64) -> Result<Matrix> {
    check_eta(eta)?;
    if x.shape() != grad_sample.shape() {
        return Err(Error::ShapeMismatch {
            left: x.shape(),
            right: grad_sample.shape(),
        });
    }
    let update = phi.apply(grad_sample)?;
    let mut out = x.clone();
    out.axpy(-eta, &update)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    #[default]
    Unit,
    /// `0.2 · √max(m, n)`.
    Dims,
}

impl ScaleMode {
    pub fn factor(self, m: usize, n: usize) -> f64 {
        match self {
            ScaleMode::Unit => 1.0,
            ScaleMode::Dims => 0.2 * (m.max(n) as f64).sqrt(),
        }
    }
}

/// `(1/N) Σ φ(G + Ξ⁽ˡ⁾)`.
pub fn pre_clip_average(samples: &[Matrix], phi: &ClipSpec) -> Result<Matrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientSamples("pre-clipping needs N >= 1 samples".into()))?;
    let mut acc = phi.apply(first)?;
    for s in &samples[1..] {
        acc.axpy(1.0, &phi.apply(s)?)?;
    }
    if samples.len() > 1 {
        acc = acc.scale(1.0 / samples.len() as f64);
    }
    Ok(acc)
}

/// `X − η · scale · msign((1/N) Σ φ(G + Ξ⁽ˡ⁾))`.
pub fn pre_clip_step(
    x: &Matrix,
    samples: &[Matrix],
    phi: &ClipSpec,
    eta: f64,
    scale_mode: ScaleMode,
    method: MsignMethod,
) -> Result<Matrix> {
    check_eta(eta)?;
    if let Some(s) = samples.iter().find(|s| s.shape() != x.shape()) {
        return Err(Error::ShapeMismatch {
            left: x.shape(),
            right: s.shape(),
        });
    }
    if eta == 0.0 {
        return Ok(x.clone());
    }
    let avg = pre_clip_average(samples, phi)?;
    let dir = msign(&avg, method)?;
    let mut out = x.clone();
    out.axpy(-eta * scale_mode.factor(x.rows(), x.cols()), &dir)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "stage")]
pub enum StepKind {
    Post { map: ScalarMap },
    Pre,
}

/// Post: `√(2Δ / (L R_φ² d K))`; pre: `√(2Δ / (L r T))`.
pub fn step_size(kind: StepKind, tc: &TheoremConstants, horizon: usize) -> Result<f64> {
    tc.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidConstants("horizon must be at least 1".into()));
    }
    let h = horizon as f64;
    Ok(match kind {
        StepKind::Post { map } => {
            map.validate()?;
            let r = map.sup_norm();
            (2.0 * tc.delta / (tc.l * r * r * tc.d() as f64 * h)).sqrt()
        }
        StepKind::Pre => (2.0 * tc.delta / (tc.l * tc.r() as f64 * h)).sqrt(),
    })
}

/// Post-clipping bound on `(1/K) Σ E‖G_k‖_F²`: `2 R_φ √(2LΔd/K)`.
pub fn post_rate_bound(map: ScalarMap, tc: &TheoremConstants, k: usize) -> f64 {
    2.0 * map.sup_norm() * (2.0 * tc.l * tc.delta * tc.d() as f64 / k as f64).sqrt()
}

/// Pre-clipping bound on `(1/T) Σ E‖G_k‖_*`: `2√(2LrΔ/T) + 4 D r^{3/2} √(v/N)`.
pub fn pre_rate_bound(v: f64, tc: &TheoremConstants, t: usize, n: usize) -> f64 {
    let r = tc.r() as f64;
    2.0 * (2.0 * tc.l * r * tc.delta / t as f64).sqrt()
        + 4.0 * tc.dim_ratio() * r.powf(1.5) * (v / n as f64).sqrt()
}

/// Everything a theorem prescribes for a target accuracy `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremPlan {
    pub kind: ThresholdKind,
    pub threshold: f64,
    pub rho: f64,
    pub v: f64,
    pub eta: f64,
    /// `K` (post) or `T` (pre).
    pub horizon: usize,
    /// Samples per step; 1 for post-clipping.
    pub samples: usize,
}

/// `multiplier ≥ 1` scales the minimal threshold.
pub fn theorem_plan(kind: ThresholdKind, tc: &TheoremConstants, epsilon: f64, multiplier: f64) -> Result<TheoremPlan> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConstants("epsilon must be positive".into()));
    }
    if !(multiplier >= 1.0 && multiplier.is_finite()) {
        return Err(Error::InvalidConstants("threshold multiplier must be >= 1".into()));
    }
    let t = threshold(kind, tc)? * multiplier;
    let map = kind.map(t);
    let bv = bias_variance_bounds(map, tc)?;
    let (l, delta, d, r) = (tc.l, tc.delta, tc.d() as f64, tc.r() as f64);
    let ceil = |x: f64| x.ceil().max(1.0) as usize;
    let (horizon, samples) = if kind.is_pre() {
        let dd = tc.dim_ratio();
        (
            ceil(32.0 * l * r * delta / epsilon.powi(2)),
            ceil(64.0 * dd * dd * r.powi(3) * bv.v / epsilon.powi(2)),
        )
    } else {
        let rp = map.sup_norm();
        (ceil(8.0 * l * delta * d * rp * rp / epsilon.powi(4)), 1)
    };
    let step = if kind.is_pre() {
        StepKind::Pre
    } else {
        StepKind::Post { map }
    };
    Ok(TheoremPlan {
        kind,
        threshold: t,
        rho: bv.rho,
        v: bv.v,
        eta: step_size(step, tc, horizon)?,
        horizon,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::ClipKind;

    fn tc(b: f64, sigma: f64, alpha: f64, gamma: f64) -> TheoremConstants {
        TheoremConstants {
            b,
            l: 1.0,
            delta: 2.0,
            alpha,
            sigma,
            gamma,
            m: 4,
            n: 4,
        }
    }

    #[test]
    fn threshold_examples() {
        let t = threshold(ThresholdKind::PostHard, &tc(1.0, 1.0, 0.5, 1.0)).unwrap();
        assert!((t - (1.0 + (2.0 * 8f64.ln()).sqrt())).abs() < 1e-15);
        assert!((t - 3.039_333_980_337_618).abs() < 1e-12);
        let t0 = threshold(ThresholdKind::PostHard, &tc(1.0, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(t0, 1.0 + (2.0 * 8f64.ln()).sqrt());

        // Cauchy-dominated: the pre-hard Cauchy term scales with √r.
        let mut one = tc(0.5, 0.0, 1.0, 1.0);
        one.m = 1;
        one.n = 1;
        let mut sixteen = one;
        sixteen.m = 16;
        sixteen.n = 16;
        let t1 = threshold(ThresholdKind::PreHard, &one).unwrap() - 0.5;
        let t16 = threshold(ThresholdKind::PreHard, &sixteen).unwrap() - 0.5;
        assert!((t16 / t1 - 4.0).abs() < 1e-14);

        assert!(threshold(ThresholdKind::PostHard, &tc(1.0, 0.0, 0.0, 1.0)).is_err());
        assert!(threshold(ThresholdKind::PostHard, &tc(1.0, 1.0, 1.5, 1.0)).is_err());
    }

    #[test]
    fn bias_variance_examples() {
        let hard = bias_variance_bounds(ScalarMap::Hard { tau: 4.0 }, &tc(1.0, 1.0, 0.0, 1.0)).unwrap();
        assert!((hard.rho - 2.0 * normal_sf(3.0)).abs() < 1e-15);
        assert!((hard.rho - 0.002_699_796_063_260_2).abs() < 1e-15);

        let smooth = bias_variance_bounds(ScalarMap::Smooth { c: 100.0 }, &tc(0.0, 1.0, 0.0, 1.0)).unwrap();
        assert!((smooth.rho - (8.0 / PI).sqrt() / 100.0).abs() < 1e-16);
        assert!((smooth.rho - 0.015_957_691).abs() < 1e-9);

        let v = bias_variance_bounds(ScalarMap::Hard { tau: 2.0 }, &tc(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((v.v - 8.0 / PI).abs() < 1e-15);

        assert_eq!(
            bias_variance_bounds(ScalarMap::Hard { tau: 1.0 }, &tc(1.0, 1.0, 0.0, 1.0)),
            Err(Error::ThresholdBelowB { tau: 1.0, bound: 1.0 })
        );
    }

    #[test]
    fn normal_sf_reference_values() {
        assert_eq!(normal_sf(0.0), 0.5);
        assert!((normal_sf(1.959_963_984_540_054) - 0.025).abs() < 1e-15);
        assert!((normal_sf(8.0) / 6.220_960_574_271_785e-16 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_basics() {
        let noise = ContaminationSpec::cauchy(0.3, 1.0, 1.0).unwrap();
        assert_eq!(relative_bias_oracle(ScalarMap::Hard { tau: 3.0 }, 0.0, &noise).unwrap(), 0.0);
        let quiet = ContaminationSpec::cauchy(0.0, 0.0, 1.0).unwrap();
        for g in [-0.7, 0.2, 0.99] {
            assert_eq!(relative_bias_oracle(ScalarMap::Hard { tau: 1.0 }, g, &quiet).unwrap(), g);
        }
        // Odd symmetry of the oracle.
        let m = |g| relative_bias_oracle(ScalarMap::Smooth { c: 5.0 }, g, &noise).unwrap();
        assert!((m(0.4) + m(-0.4)).abs() < 1e-10);
    }

    #[test]
    fn moments_match_closed_forms() {
        // Pure Cauchy through hard clipping: E C_τ(H)² = 2∫₀^∞ min(h,τ)² p(h) dh.
        let gamma = 1.0;
        let tau = 2.0;
        let noise = ContaminationSpec::cauchy(1.0, 0.0, gamma).unwrap();
        let mm = processed_moments(ScalarMap::Hard { tau }, 0.0, &noise).unwrap();
        // ∫₀^τ h² γ/(π(γ²+h²)) dh = (γ/π)(τ − γ atan(τ/γ)); tail τ²·atan(γ/τ)/π.
        let closed = 2.0 * (gamma / PI * (tau - gamma * (tau / gamma).atan()) + tau * tau * (gamma / tau).atan() / PI);
        assert!((mm.variance - closed).abs() < 1e-9, "{} vs {closed}", mm.variance);
        // Gaussian branch through a never-active clip is the identity.
        let g = ContaminationSpec::cauchy(0.0, 0.5, 1.0).unwrap();
        let mm = processed_moments(ScalarMap::Hard { tau: 50.0 }, 0.3, &g).unwrap();
        assert!((mm.mean - 0.3).abs() < 1e-9 && (mm.variance - 0.25).abs() < 1e-9);
    }

    #[test]
    fn hard_relative_bias_at_post_threshold() {
        let c = tc(1.0, 1.0, 0.3, 1.0);
        let tau = threshold(ThresholdKind::PostHard, &c).unwrap();
        let rho = bias_variance_bounds(ScalarMap::Hard { tau }, &c).unwrap().rho;
        for k in -20..=20 {
            if k == 0 {
                continue;
            }
            let g = k as f64 / 20.0;
            let m = relative_bias_oracle(ScalarMap::Hard { tau }, g, &c.noise()).unwrap();
            assert!((m - g).abs() <= rho * g.abs(), "g={g}: {m}");
        }
    }

    #[test]
    fn deficits_within_bounds() {
        for c in [0.3, 1.0, 10.0, 1000.0] {
            let d = derivative_deficits(c, 1.0, 1.0).unwrap();
            assert!(d.gaussian <= d.gaussian_bound && d.cauchy <= d.cauchy_bound, "{c}: {d:?}");
            assert!(d.gaussian > 0.0 && d.cauchy > 0.0);
        }
    }

    #[test]
    fn log_device_examples() {
        assert!(log_device_check(0.0, 3.0, 0.0));
        assert!(log_device_check(0.0, 3.0, 5.0));
        let x = 8.0 * (E + 8.0).ln();
        assert!((x - 18.97).abs() < 0.01);
        assert!(log_device_check(1.0, 4.0, x));
        assert!((E + x).ln() / x <= 0.25);
        assert!(!log_device_check(1.0, 4.0, 0.5 * x));
    }

    #[test]
    fn post_step_examples() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let g = Matrix::from_rows(&[vec![0.3, 0.1]]).unwrap();
        let hard = ClipSpec::absolute(ClipKind::HardCoordinate, 1.0);
        assert_eq!(post_clip_step(&x, &g, &hard, 0.0).unwrap(), x);
        let sgd = post_clip_step(&x, &g, &hard, 0.5).unwrap();
        assert_eq!(sgd, x.sub(&g.scale(0.5)).unwrap());
        let out = post_clip_step(
            &Matrix::zeros(1, 1),
            &Matrix::from_rows(&[vec![2.0]]).unwrap(),
            &hard,
            0.5,
        )
        .unwrap();
        assert_eq!(out[(0, 0)], -0.5);
        assert!(post_clip_step(&x, &Matrix::zeros(2, 1), &hard, 0.1).is_err());
    }

    #[test]
    fn pre_step_examples() {
        let x = Matrix::zeros(2, 2);
        let s = Matrix::from_diag(&[3.0, -2.0]);
        let out = pre_clip_step(&x, &[s.clone()], &ClipSpec::none(), 1.0, ScaleMode::Unit, MsignMethod::ExactSvd).unwrap();
        assert!(out.sub(&Matrix::from_diag(&[-1.0, 1.0])).unwrap().as_slice().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(
            pre_clip_step(&x, &[s], &ClipSpec::none(), 0.0, ScaleMode::Unit, MsignMethod::ExactSvd).unwrap(),
            x
        );
        assert!(pre_clip_step(&x, &[], &ClipSpec::none(), 1.0, ScaleMode::Unit, MsignMethod::ExactSvd).is_err());
        assert!((ScaleMode::Dims.factor(16, 64) - 1.6).abs() < 1e-15);

        let g = crate::noise::gaussian_matrix(6, 4, crate::noise::SeedSpec::new(3, 0));
        let samples: Vec<Matrix> = (0..3).map(|k| g.scale(1.0 + k as f64)).collect();
        let x = Matrix::zeros(6, 4);
        let out = pre_clip_step(&x, &samples, &ClipSpec::none(), 0.3, ScaleMode::Dims, MsignMethod::ExactSvd).unwrap();
        let s = crate::linalg::full_svd(&out).unwrap().singular_values;
        let want = 0.3 * ScaleMode::Dims.factor(6, 4);
        assert!(s.iter().all(|v| (v - want).abs() < 1e-6), "{s:?}");
    }

    #[test]
    fn step_size_examples() {
        let mut c = tc(1.0, 1.0, 0.0, 1.0);
        c.m = 2;
        c.n = 2;
        let eta = step_size(StepKind::Post { map: ScalarMap::Hard { tau: 2.0 } }, &c, 100).unwrap();
        assert!((eta - 0.05).abs() < 1e-15);
        c.m = 4;
        c.n = 4;
        let eta = step_size(StepKind::Pre, &c, 100).unwrap();
        assert!((eta - 0.1).abs() < 1e-15);
        let e1 = step_size(StepKind::Pre, &c, 1000).unwrap();
        let e2 = step_size(StepKind::Pre, &c, 2000).unwrap();
        assert!((e1 / e2 - 2f64.sqrt()).abs() < 1e-14);
        // Smooth: e·√(2Δ/(Lc²dK)).
        let es = step_size(StepKind::Post { map: ScalarMap::Smooth { c: 3.0 } }, &c, 50).unwrap();
        assert!((es - E * (2.0 * 2.0 / (9.0 * 16.0 * 50.0f64)).sqrt()).abs() < 1e-15);
        assert!(step_size(StepKind::Pre, &c, 0).is_err());
    }

    #[test]
    fn plans_meet_rho_targets() {
        let c = TheoremConstants {
            m: 16,
            n: 64,
            ..tc(1.0, 1.0, 0.2, 1.0)
        };
        for kind in ThresholdKind::ALL {
            let p = theorem_plan(kind, &c, 0.5, 1.0).unwrap();
            assert!(p.rho <= kind.rho_target(c.r()), "{kind:?}: {}", p.rho);
            assert!(p.horizon >= 1 && p.samples >= 1);
        }
        assert!(theorem_plan(ThresholdKind::PreHard, &c, 0.5, 0.9).is_err());
    }
}
