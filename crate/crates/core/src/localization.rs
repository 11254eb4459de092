//! Localization diagnostics for a noise matrix `E` relative to a signal `G`.
//!
//! `R(E) = r_max / r` compares the largest single-entry contribution
//! `max |u_i E_ij v_j|²` with the full bilinear projection `⟨u vᵀ, E⟩²`
//! (both over `‖E‖_F²`, which cancels). `R̂` divides by the median of `R`
//! over i.i.d. Gaussian matrices with the same `(u, v)`.

use crate::error::{Error, Result};
use crate::linalg::{full_svd, gap_from_values, operator_norm, DEFAULT_GAP_TOL};
use crate::matrix::{norm2, Matrix};
use crate::noise::SeedSpec;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BASELINE_DRAWS: usize = 256;
pub const MIN_BASELINE_DRAWS: usize = 64;
const UNIT_TOL: f64 = 1e-8;
/// `|⟨uvᵀ,E⟩|` below this fraction of `Σ|u_i E_ij v_j|` counts as zero.
const PROJECTION_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub r_max: f64,
    pub r: f64,
}

impl Components {
    /// `r_max / r`.
    pub fn ratio(&self) -> Result<f64> {
        if self.r > 0.0 {
            Ok(self.r_max / self.r)
        } else {
            Err(Error::DegenerateProjection)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub r_max: f64,
    pub r: f64,
    pub ratio_r: f64,
    pub baseline_median: f64,
    pub normalized_r_hat: f64,
    /// Zero-based singular direction of `G` used for `(u, v)`.
    pub direction: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorPrediction {
    pub sigma1_base: f64,
    pub first_order_term: f64,
    pub predicted: f64,
    pub remainder_bound: f64,
    pub applicable: bool,
    pub gap: f64,
    pub noise_op_norm: f64,
}

fn check_unit(x: &[f64]) -> Result<()> {
    let nrm = norm2(x);
    if (nrm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NonUnitVector(nrm));
    }
    Ok(())
}

pub fn localization_components(u: &[f64], v: &[f64], e: &Matrix) -> Result<Components> {
    if u.len() != e.rows() {
        return Err(Error::LengthMismatch(u.len(), e.rows()));
    }
    if v.len() != e.cols() {
        return Err(Error::LengthMismatch(v.len(), e.cols()));
    }
    check_unit(u)?;
    check_unit(v)?;
    if e.is_zero() {
        return Err(Error::ZeroNoise);
    }
    Ok(components_unchecked(u, v, e))
}

fn components_unchecked(u: &[f64], v: &[f64], e: &Matrix) -> Components {
    // Work with E / max|E| so Cauchy-sized entries cannot overflow squares.
    let scale = e.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (mut fro, mut proj, mut abs_sum, mut peak) = (0.0, 0.0, 0.0, 0.0f64);
    for (i, &ui) in u.iter().enumerate() {
        for (&x, &vj) in e.row(i).iter().zip(v) {
            let x = x / scale;
            fro += x * x;
            let t = ui * x * vj;
            proj += t;
            abs_sum += t.abs();
            peak = peak.max(t.abs());
        }
    }
    let r = if proj.abs() <= PROJECTION_RTOL * abs_sum {
        0.0
    } else {
        proj * proj / fro
    };
    Components {
        r_max: peak * peak / fro,
        r,
    }
}

/// `R(E) = r_max / r`.
pub fn localization_ratio(u: &[f64], v: &[f64], e: &Matrix) -> Result<f64> {
    localization_components(u, v, e)?.ratio()
}

/// Median of `R(E_Gauss)` over `draws` i.i.d. `N(0, 1)` matrices; draw `k`
/// uses its own ChaCha stream derived from `seed`.
pub fn gaussian_baseline_median(
    u: &[f64],
    v: &[f64],
    draws: usize,
    seed: SeedSpec,
) -> Result<f64> {
    if draws < MIN_BASELINE_DRAWS {
        return Err(Error::InsufficientSamples(format!(
            "baseline needs at least {MIN_BASELINE_DRAWS} draws, got {draws}"
        )));
    }
    check_unit(u)?;
    check_unit(v)?;
    let (m, n) = (u.len(), v.len());
    let mut ratios: Vec<f64> = (0..draws)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = baseline_stream(seed, k).rng();
            let data: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
            let e = Matrix::from_raw(m, n, data);
            components_unchecked(u, v, &e).ratio().ok()
        })
        .collect();
    if ratios.len() < draws / 2 {
        return Err(Error::InsufficientSamples(
            "too many degenerate baseline draws".into(),
        ));
    }
    Ok(median(&mut ratios))
}

fn baseline_stream(seed: SeedSpec, k: usize) -> SeedSpec {
    SeedSpec::new(
        seed.seed ^ 0x6C6F_6361_6C69_7A65,
        (seed.stream << 24).wrapping_add(k as u64),
    )
}

pub(crate) fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Singular direction pair of a signal with its Gaussian baseline cached, so
/// many noise matrices can be scored against the same `G`.
#[derive(Debug, Clone)]
pub struct Localizer {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub baseline_median: f64,
    pub direction: usize,
}

impl Localizer {
    /// Uses the top singular pair of `g`.
    pub fn new(g: &Matrix, draws: usize, seed: SeedSpec) -> Result<Self> {
        Self::with_direction(g, 0, draws, seed)
    }

    /// Uses the `direction`-th (zero-based) singular pair; it must be
    /// separated from its neighbours.
    pub fn with_direction(g: &Matrix, direction: usize, draws: usize, seed: SeedSpec) -> Result<Self> {
        if direction >= g.min_dim() {
            return Err(Error::RankTooLarge {
                rank: direction + 1,
                max: g.min_dim(),
            });
        }
        let svd = full_svd(g)?;
        let s = &svd.singular_values;
        if s[0] == 0.0 {
            return Err(Error::ZeroMatrix);
        }
        let separated = |a: f64, b: f64| a - b >= DEFAULT_GAP_TOL * s[0];
        let below_ok = direction + 1 >= s.len() || separated(s[direction], s[direction + 1]);
        let above_ok = direction == 0 || separated(s[direction - 1], s[direction]);
        if !(below_ok && above_ok) {
            let (a, b) = if !above_ok {
                (s[direction - 1], s[direction])
            } else {
                (s[direction], s[direction + 1])
            };
            return Err(Error::DegenerateSpectrum { sigma1: a, sigma2: b });
        }
        let u = svd.left_vector(direction);
        let v = svd.right_vector(direction);
        let baseline_median = gaussian_baseline_median(&u, &v, draws, seed)?;
        Ok(Self {
            u,
            v,
            baseline_median,
            direction,
        })
    }

    pub fn report(&self, e: &Matrix) -> Result<LocalizationReport> {
        let c = localization_components(&self.u, &self.v, e)?;
        let ratio_r = c.ratio()?;
        Ok(LocalizationReport {
            r_max: c.r_max,
            r: c.r,
            ratio_r,
            baseline_median: self.baseline_median,
            normalized_r_hat: ratio_r / self.baseline_median,
            direction: self.direction,
        })
    }

    /// Index of `max |u_i| · |v_j|`, where a single-entry spike is most visible.
    pub fn peak_position(&self) -> (usize, usize) {
        let argmax = |x: &[f64]| {
            (0..x.len())
                .max_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()))
                .unwrap_or(0)
        };
        (argmax(&self.u), argmax(&self.v))
    }
}

pub fn localization_report(g: &Matrix, e: &Matrix, draws: usize, seed: SeedSpec) -> Result<LocalizationReport> {
    Localizer::new(g, draws, seed)?.report(e)
}

/// First-order prediction `σ₁(G) + u₁ᵀ E v₁` with remainder bound
/// `4‖E‖²_op / δ`, valid when `‖E‖_op < δ/4`.
pub fn taylor_prediction(g: &Matrix, e: &Matrix) -> Result<TaylorPrediction> {
    if g.shape() != e.shape() {
        return Err(Error::ShapeMismatch {
            left: g.shape(),
            right: e.shape(),
        });
    }
    let svd = full_svd(g)?;
    let s = &svd.singular_values;
    let info = if s.len() >= 2 {
        gap_from_values(s, DEFAULT_GAP_TOL)
    } else {
        gap_from_values(&[s[0], 0.0], DEFAULT_GAP_TOL)
    };
    if info.degenerate {
        return Err(Error::DegenerateSpectrum {
            sigma1: info.sigma1,
            sigma2: info.sigma2,
        });
    }
    let u1 = svd.left_vector(0);
    let v1 = svd.right_vector(0);
    let first_order_term = e.bilinear(&u1, &v1);
    let noise_op_norm = if e.is_zero() { 0.0 } else { operator_norm(e)? };
    Ok(TaylorPrediction {
        sigma1_base: info.sigma1,
        first_order_term,
        predicted: info.sigma1 + first_order_term,
        remainder_bound: 4.0 * noise_op_norm * noise_op_norm / info.gap,
        applicable: noise_op_norm < info.gap / 4.0,
        gap: info.gap,
        noise_op_norm,
    })
}

/// Ranks starting at 1, ties replaced by their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "spearman needs at least 3 pairs, got {}",
            xs.len()
        )));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mean = (xs.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InsufficientSamples("constant input has no ranks".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman ρ between `max |E_ij|` and `σ₁(E)` across realizations.
pub fn spectral_max_spearman(samples: &[Matrix]) -> Result<f64> {
    let (maxes, sigmas): (Vec<f64>, Vec<f64>) = samples
        .par_iter()
        .map(|e| {
            let peak = e.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            operator_norm(e).map(|s| (peak, s))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    spearman_rho(&maxes, &sigmas)
}

/// `⌈0.01 n⌉` clamped to `[10, n/4]`.
pub fn default_hill_k(n: usize) -> usize {
    (n.div_ceil(100)).clamp(10, (n / 4).max(10))
}

/// Hill tail-index estimate `1 / H_k` from the `k + 1` largest `|samples|`.
pub fn hill_estimator(samples: &[f64], k: Option<usize>) -> Result<f64> {
    let mut abs: Vec<f64> = samples
        .iter()
        .map(|x| x.abs())
        .filter(|x| *x > 0.0 && x.is_finite())
        .collect();
    let k = k.unwrap_or_else(|| default_hill_k(abs.len()));
    if k < 10 || k >= abs.len() {
        return Err(Error::InsufficientSamples(format!(
            "hill needs 10 <= k < #positive samples, got k={k} with {} positives",
            abs.len()
        )));
    }
    let len = abs.len();
    abs.select_nth_unstable_by(len - k - 1, f64::total_cmp);
    let threshold = abs[len - k - 1];
    let h = abs[len - k..].iter().map(|x| (x / threshold).ln()).sum::<f64>() / k as f64;
    if !(h > 0.0) {
        return Err(Error::InsufficientSamples("tail has no spread (H_k = 0)".into()));
    }
    Ok(1.0 / h)
}

/// `strength · a bᵀ + noise · Z` with `a, b` random-sign vectors of unit
/// norm: a signal whose top singular pair is delocalized,
/// `|u_i v_j| ≈ 1/√(mn)`.
pub fn delocalized_signal(m: usize, n: usize, strength: f64, noise: f64, seed: SeedSpec) -> Matrix {
    let mut rng = seed.rng();
    let mut sign = |len: usize| -> Vec<f64> {
        let s = 1.0 / (len as f64).sqrt();
        (0..len).map(|_| if rng.random::<bool>() { s } else { -s }).collect()
    };
    let a = sign(m);
    let b = sign(n);
    let mut g = Matrix::outer(&a, &b).scale(strength);
    for x in g.as_mut_slice() {
        let z: f64 = rng.sample(StandardNormal);
        *x += noise * z;
    }
    g
}
