//! Numerical verification of the scalar lemmas behind the clipped-optimizer
//! guarantees. Every check records the measured quantity next to its bound.

use crate::error::{Error, Result};
use crate::linalg::{msign, nuclear_norm, operator_norm, MsignMethod};
use crate::noise::{gaussian_matrix, sample_scalar_noise, ContaminationSpec, HeavyTail, SeedSpec};
use crate::optim::{
    bias_variance_bounds, derivative_deficits, log_device_check, log_device_premise, normal_sf,
    processed_moments, relative_bias_oracle, threshold, ScalarMap, TheoremConstants, ThresholdKind,
};
use crate::quadrature::{integrate_pieces, QuadOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{E, PI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub b: f64,
    pub sigma: f64,
    pub gamma: f64,
    /// Contamination levels for the bias and variance checks.
    pub alphas: Vec<f64>,
    /// Matrix shape fixing `r` for the pre-clipping thresholds.
    pub m: usize,
    pub n: usize,
    /// Odd number of g-grid points on `[−B, B]`; `g = 0` is dropped.
    pub grid_points: usize,
    pub mc_draws: usize,
    pub mc_se_slack: f64,
    pub lattice: ThresholdLattice,
    pub msign_pairs: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            b: 1.0,
            sigma: 1.0,
            gamma: 1.0,
            alphas: vec![0.0, 0.01, 0.1, 0.3, 0.5, 1.0],
            m: 16,
            n: 16,
            grid_points: 41,
            mc_draws: 1_000_000,
            mc_se_slack: 5.0,
            lattice: ThresholdLattice::default(),
            msign_pairs: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdLattice {
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub r: Vec<usize>,
}

impl Default for ThresholdLattice {
    fn default() -> Self {
        Self {
            b: vec![0.1, 1.0, 10.0],
            sigma: vec![0.0, 0.5, 1.0, 5.0],
            gamma: vec![0.1, 1.0, 10.0],
            alpha: vec![0.0, 0.01, 0.1, 0.5, 1.0],
            r: vec![1, 4, 16, 64],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub group: String,
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub measured: f64,
    pub bound: f64,
    pub status: CheckStatus,
}

impl LemmaCheck {
    fn new(group: &str, name: &str, params: &[(&str, f64)], measured: f64, bound: f64, pass: bool) -> Self {
        Self {
            group: group.into(),
            name: name.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            measured,
            bound,
            status: if pass && measured.is_finite() {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
        }
    }

    /// `measured ≤ bound`.
    fn le(group: &str, name: &str, params: &[(&str, f64)], measured: f64, bound: f64) -> Self {
        Self::new(group, name, params, measured, bound, measured <= bound)
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub checks: Vec<LemmaCheck>,
    pub total: usize,
    pub failed: usize,
    pub passed: bool,
}

impl VerifyReport {
    fn from_checks(config: VerifyConfig, checks: Vec<LemmaCheck>) -> Self {
        let failed = checks.iter().filter(|c| !c.passed()).count();
        Self {
            config,
            total: checks.len(),
            failed,
            passed: failed == 0,
            checks,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &LemmaCheck> {
        self.checks.iter().filter(|c| !c.passed())
    }

    /// Checks belonging to one group.
    pub fn group<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a LemmaCheck> + 'a {
        self.checks.iter().filter(move |c| c.group == name)
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidSpec(what.to_string()));
        if self.grid_points < 3 || self.grid_points % 2 == 0 {
            return bad("grid_points must be odd and at least 3");
        }
        if self.mc_draws < 1000 {
            return bad("mc_draws must be at least 1000");
        }
        if !(self.mc_se_slack >= 0.0) {
            return bad("mc_se_slack must be non-negative");
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("alphas must lie in [0, 1]");
        }
        self.constants(0.0)?;
        Ok(())
    }

    fn constants(&self, alpha: f64) -> Result<TheoremConstants> {
        let tc = TheoremConstants {
            b: self.b,
            l: 1.0,
            delta: 1.0,
            alpha,
            sigma: self.sigma,
            gamma: self.gamma,
            m: self.m,
            n: self.n,
        };
        tc.validate()?;
        Ok(tc)
    }

    fn g_grid(&self) -> Vec<f64> {
        let half = (self.grid_points / 2) as i64;
        (-half..=half)
            .filter(|&k| k != 0)
            .map(|k| self.b * k as f64 / half as f64)
            .collect()
    }
}

fn kind_name(kind: ThresholdKind) -> &'static str {
    match kind {
        ThresholdKind::PostHard => "post_hard",
        ThresholdKind::PostSmooth => "post_smooth",
        ThresholdKind::PreHard => "pre_hard",
        ThresholdKind::PreSmooth => "pre_smooth",
    }
}

/// Threshold configurations exercised by the bias and variance checks.
fn theorem_maps(cfg: &VerifyConfig) -> Result<Vec<(ThresholdKind, f64, ScalarMap, TheoremConstants)>> {
    let mut out = Vec::new();
    for &alpha in &cfg.alphas {
        let tc = cfg.constants(alpha)?;
        for kind in ThresholdKind::ALL {
            match threshold(kind, &tc) {
                Ok(t) => out.push((kind, alpha, kind.map(t), tc)),
                // Noise-free hard clipping at τ = B has no admissible threshold.
                Err(Error::InvalidConstants(_)) if alpha == 0.0 && cfg.sigma == 0.0 => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

fn relative_bias_checks(cfg: &VerifyConfig) -> Result<Vec<LemmaCheck>> {
    let grid = cfg.g_grid();
    theorem_maps(cfg)?
        .into_par_iter()
        .map(|(kind, alpha, map, tc)| {
            let rho = bias_variance_bounds(map, &tc)?.rho;
            let noise = tc.noise();
            let mut worst = 0.0f64;
            for &g in &grid {
                let m = relative_bias_oracle(map, g, &noise)?;
                worst = worst.max((m - g).abs() / g.abs());
            }
            Ok(LemmaCheck::le(
                "relative_bias",
                kind_name(kind),
                &[("alpha", alpha), ("threshold", map.threshold()), ("B", tc.b)],
                worst,
                rho,
            ))
        })
        .collect()
}

fn variance_checks(cfg: &VerifyConfig) -> Result<Vec<LemmaCheck>> {
    let maps = theorem_maps(cfg)?;
    let mut out = Vec::new();
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let noise = cfg.constants(alpha)?.noise();
        let xi = sample_scalar_noise(&noise, cfg.mc_draws, SeedSpec::new(cfg.seed, 0x7661_0000 + ai as u64))?;
        let cells: Vec<_> = maps
            .iter()
            .filter(|(_, a, _, _)| *a == alpha)
            .flat_map(|&(kind, _, map, tc)| [0.0, 0.5 * cfg.b, cfg.b].map(move |g| (kind, map, tc, g)))
            .collect();
        let rows: Vec<Result<Vec<LemmaCheck>>> = cells
            .par_iter()
            .map(|&(kind, map, tc, g)| {
                let v = bias_variance_bounds(map, &tc)?.v;
                let (mean, var, se) = mc_variance(&xi, |x| map.apply(g + x));
                let quad = processed_moments(map, g, &noise)?;
                let params = [
                    ("alpha", alpha),
                    ("g", g),
                    ("threshold", map.threshold()),
                    ("draws", xi.len() as f64),
                ];
                let slack = cfg.mc_se_slack * se;
                Ok(vec![
                    LemmaCheck::le("variance", &format!("{}_mc", kind_name(kind)), &params, var, v + slack),
                    LemmaCheck::le("variance", &format!("{}_quadrature", kind_name(kind)), &params, quad.variance, v),
                    LemmaCheck::le(
                        "variance",
                        &format!("{}_mc_vs_quadrature", kind_name(kind)),
                        &params,
                        (var - quad.variance).abs().max((mean - quad.mean).abs()),
                        slack.max(1e-12),
                    ),
                ])
            })
            .collect();
        for r in rows {
            out.extend(r?);
        }
    }
    Ok(out)
}

/// Sample mean, variance and the standard error of the variance estimate.
fn mc_variance(xi: &[f64], f: impl Fn(f64) -> f64) -> (f64, f64, f64) {
    let n = xi.len() as f64;
    let mean = xi.iter().map(|&x| f(x)).sum::<f64>() / n;
    let (m2, m4) = xi.iter().fold((0.0, 0.0), |(s2, s4), &x| {
        let d = f(x) - mean;
        let d2 = d * d;
        (s2 + d2, s4 + d2 * d2)
    });
    let var = m2 / (n - 1.0);
    let mu4 = m4 / n;
    let se = ((mu4 - var * var).max(0.0) / n).sqrt();
    (mean, var, se)
}

fn deficit_checks() -> Result<Vec<LemmaCheck>> {
    const QUAD_TOL: f64 = 1e-9;
    let mut out = Vec::new();
    for c in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1000.0] {
        for (sigma, gamma) in [(0.5, 0.1), (1.0, 1.0), (5.0, 10.0)] {
            let d = derivative_deficits(c, sigma, gamma)?;
            let params = [("c", c), ("sigma", sigma), ("gamma", gamma)];
            out.push(LemmaCheck::le("derivative_deficit", "gaussian", &params, d.gaussian, d.gaussian_bound + QUAD_TOL));
            out.push(LemmaCheck::le("derivative_deficit", "cauchy", &params, d.cauchy, d.cauchy_bound + QUAD_TOL));
        }
    }
    Ok(out)
}

fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn log_device_checks() -> Vec<LemmaCheck> {
    let mut a_grid = vec![0.0];
    a_grid.extend(log_space(1e-3, 1e3, 19));
    let s_grid = log_space(1.0, 1e4, 20);
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    let mut failures = 0usize;
    for &a in &a_grid {
        for &s in &s_grid {
            let k = 2.0 * s * a;
            let x0 = k * (E + k).ln();
            let xs: Vec<f64> = if x0 == 0.0 {
                vec![0.0, 1e-3, 1.0, 1e3]
            } else {
                [1.0, 1.0 + 1e-9, 2.0, 10.0, 1e3].iter().map(|f| f * x0).collect()
            };
            for x in xs {
                if !log_device_premise(a, s, x) {
                    continue;
                }
                cases += 1;
                if !log_device_check(a, s, x) {
                    failures += 1;
                }
                if x > 0.0 {
                    worst = worst.max(s * a * (E + x).ln() / x);
                }
            }
        }
    }
    vec![LemmaCheck::new(
        "log_device",
        "lattice_20x20",
        &[("cases", cases as f64), ("failures", failures as f64)],
        worst,
        1.0,
        failures == 0 && cases > 0 && worst <= 1.0 + 1e-12,
    )]
}

fn threshold_checks(cfg: &VerifyConfig) -> Result<Vec<LemmaCheck>> {
    let lat = &cfg.lattice;
    let mut out = Vec::new();
    for kind in ThresholdKind::ALL {
        let rs: &[usize] = if kind.is_pre() { &lat.r } else { &[1] };
        for &r in rs {
            let target = kind.rho_target(r);
            let mut worst = 0.0f64;
            let mut cases = 0usize;
            let mut skipped = 0usize;
            for &b in &lat.b {
                for &sigma in &lat.sigma {
                    for &gamma in &lat.gamma {
                        for &alpha in &lat.alpha {
                            let tc = TheoremConstants {
                                b,
                                l: 1.0,
                                delta: 1.0,
                                alpha,
                                sigma,
                                gamma,
                                m: r,
                                n: r,
                            };
                            let t = match threshold(kind, &tc) {
                                Ok(t) => t,
                                Err(Error::InvalidConstants(_)) if sigma == 0.0 && alpha == 0.0 => {
                                    skipped += 1;
                                    continue;
                                }
                                Err(e) => return Err(e),
                            };
                            let rho = bias_variance_bounds(kind.map(t), &tc)?.rho;
                            worst = worst.max(rho / target);
                            cases += 1;
                        }
                    }
                }
            }
            out.push(LemmaCheck::le(
                "threshold",
                kind_name(kind),
                &[
                    ("r", r as f64),
                    ("rho_target", target),
                    ("cases", cases as f64),
                    ("skipped", skipped as f64),
                ],
                worst * target,
                target,
            ));
        }
    }
    Ok(out)
}

fn tail_checks(cfg: &VerifyConfig) -> Result<Vec<LemmaCheck>> {
    let mut out = Vec::new();
    let opts = QuadOptions::default();
    for gamma in [0.1f64, 1.0, 10.0] {
        for ratio in [0.5, 1.0, 10.0, 1000.0] {
            let a = ratio * gamma;
            let params = [("gamma", gamma), ("a", a)];
            let tail = (gamma / a).atan() / PI;
            out.push(LemmaCheck::le("tails", "cauchy_tail", &params, tail, gamma / (PI * a)));
            let pdf = |h: f64| gamma / (PI * (gamma * gamma + h * h));
            let trunc = 2.0
                * integrate_pieces(|h| (h * h).min(a * a) * pdf(h), &[0.0, gamma, a, f64::INFINITY], &opts)?.value;
            out.push(LemmaCheck::le("tails", "cauchy_truncated_second_moment", &params, trunc, 4.0 * gamma * a / PI));
        }
    }
    for t in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let exact = 2.0 * normal_sf(t);
        out.push(LemmaCheck::le("tails", "gaussian_tail", &[("t_over_sigma", t)], exact, 2.0 * (-t * t / 2.0).exp()));
    }
    // The heavy-tail sampler reproduces the exact Cauchy tail.
    let heavy = ContaminationSpec::new(1.0, 0.0, HeavyTail::Cauchy { gamma: 1.0 })?;
    let xi = sample_scalar_noise(&heavy, cfg.mc_draws, SeedSpec::new(cfg.seed, 0x7461_696c))?;
    for a in [1.0, 10.0] {
        let p = 2.0 * (1.0f64 / a).atan() / PI;
        let hits = xi.iter().filter(|x| x.abs() > a).count() as f64 / xi.len() as f64;
        let se = (p * (1.0 - p) / xi.len() as f64).sqrt();
        out.push(LemmaCheck::le(
            "tails",
            "cauchy_sampler_tail",
            &[("a", a), ("exact", p)],
            (hits - p).abs(),
            cfg.mc_se_slack * se,
        ));
        // Monte Carlo E min{H², a²} within 3 standard errors of 4γa/π.
        let (mean, var, _) = mc_variance(&xi, |x| (x * x).min(a * a));
        let se = (var / xi.len() as f64).sqrt();
        out.push(LemmaCheck::le(
            "tails",
            "cauchy_truncated_second_moment_mc",
            &[("a", a), ("gamma", 1.0)],
            mean,
            4.0 * a / PI + 3.0 * se,
        ));
    }
    Ok(out)
}

fn smooth_shrinkage_checks() -> Vec<LemmaCheck> {
    let mut out = Vec::new();
    for c in [0.1, 1.0, 7.5] {
        let map = ScalarMap::Smooth { c };
        let sup = (0..=20_000)
            .map(|i| map.apply(c * i as f64 / 1000.0).abs())
            .fold(0.0, f64::max);
        out.push(LemmaCheck::le("smooth_shrinkage", "sup_norm", &[("c", c)], sup, c / E * (1.0 + 1e-15)));
    }
    out
}

fn msign_descent_checks(cfg: &VerifyConfig) -> Result<Vec<LemmaCheck>> {
    let (m, n) = (12usize, 8usize);
    let r = m.min(n) as f64;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_fro = 0.0f64;
    let mut worst_op = 0.0f64;
    for k in 0..cfg.msign_pairs {
        let g = gaussian_matrix(m, n, SeedSpec::new(cfg.seed, 0x6d73_0000 + 2 * k as u64));
        let e = gaussian_matrix(m, n, SeedSpec::new(cfg.seed, 0x6d73_0001 + 2 * k as u64))
            .scale([0.01, 0.1, 1.0, 3.0][k % 4]);
        let u = msign(&g.add(&e)?, MsignMethod::ExactSvd)?;
        let lhs = g.inner(&u)?;
        let rhs = nuclear_norm(&g)? - 2.0 * nuclear_norm(&e)?;
        worst_gap = worst_gap.max(rhs - lhs);
        worst_fro = worst_fro.max(u.inner(&u)?);
        worst_op = worst_op.max(operator_norm(&u)?);
    }
    let pairs = [("pairs", cfg.msign_pairs as f64), ("r", r)];
    Ok(vec![
        LemmaCheck::le("msign_descent", "inner_product_deficit", &pairs, worst_gap, 1e-9),
        LemmaCheck::le("msign_descent", "frobenius_sq", &pairs, worst_fro, r + 1e-8),
        LemmaCheck::le("msign_descent", "operator_norm", &pairs, worst_op, 1.0 + 1e-8),
    ])
}

/// Runs every lemma check; numerical failures abort, bound violations are
/// reported as failed checks.
pub fn run_lemma_suite(cfg: &VerifyConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let mut checks = relative_bias_checks(cfg)?;
    checks.extend(variance_checks(cfg)?);
    checks.extend(deficit_checks()?);
    checks.extend(log_device_checks());
    checks.extend(threshold_checks(cfg)?);
    checks.extend(tail_checks(cfg)?);
    checks.extend(smooth_shrinkage_checks());
    checks.extend(msign_descent_checks(cfg)?);
    Ok(VerifyReport::from_checks(cfg.clone(), checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_grid_has_forty_points() {
        let g = VerifyConfig::default().g_grid();
        assert_eq!(g.len(), 40);
        assert_eq!(g[0], -1.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.iter().all(|&x| x != 0.0));
    }

    #[test]
    fn small_suite_passes() {
        let cfg = VerifyConfig {
            alphas: vec![0.0, 0.3, 1.0],
            mc_draws: 20_000,
            msign_pairs: 4,
            ..VerifyConfig::default()
        };
        let rep = run_lemma_suite(&cfg).unwrap();
        let bad: Vec<_> = rep.failures().collect();
        assert!(rep.passed, "{bad:#?}");
        for group in ["relative_bias", "variance", "derivative_deficit", "log_device", "threshold", "tails", "msign_descent"] {
            assert!(rep.group(group).count() > 0, "{group}");
        }
    }

    #[test]
    fn noise_free_hard_threshold_is_skipped() {
        let cfg = VerifyConfig {
            sigma: 0.0,
            alphas: vec![0.0],
            ..VerifyConfig::default()
        };
        let maps = theorem_maps(&cfg).unwrap();
        assert!(maps.iter().all(|(k, ..)| !k.is_hard()));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = VerifyConfig {
            grid_points: 40,
            ..VerifyConfig::default()
        };
        assert!(run_lemma_suite(&cfg).is_err());
    }

    #[test]
    fn mc_variance_matches_uniform() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64 + 0.5) / 10_000.0).collect();
        let (mean, var, se) = mc_variance(&xs, |x| x);
        assert!((mean - 0.5).abs() < 1e-12);
        assert!((var - 1.0 / 12.0).abs() < 1e-5);
        assert!(se > 0.0 && se < 1e-3);
    }
}
