//! Clipping maps for matrix-valued updates.
//!
//! Three entry-wise maps (hard saturation, smooth exponential shrinkage and
//! the identity) plus two whole-matrix maps (Frobenius rescaling and
//! singular-value truncation). Thresholds are either absolute or the
//! type-7 quantile of the current update's absolute entries.

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, full_svd};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

/// Smallest threshold a quantile rule may produce.
pub const QUANTILE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    /// Pass-through; the unclipped baseline.
    None,
    HardCoordinate,
    Global,
    Spectral,
    SmoothShrinkage,
}

impl ClipKind {
    pub fn is_entrywise(self) -> bool {
        matches!(
            self,
            ClipKind::None | ClipKind::HardCoordinate | ClipKind::SmoothShrinkage
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum ThresholdMode {
    Absolute { value: f64 },
    Quantile { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSpec {
    pub kind: ClipKind,
    pub threshold: ThresholdMode,
    /// Wiener gain applied by smooth shrinkage; ignored by the other maps.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    1.0
}

impl ClipSpec {
    pub fn none() -> Self {
        Self {
            kind: ClipKind::None,
            threshold: ThresholdMode::Absolute { value: 1.0 },
            beta: 1.0,
        }
    }

    pub fn absolute(kind: ClipKind, threshold: f64) -> Self {
        Self {
            kind,
            threshold: ThresholdMode::Absolute { value: threshold },
            beta: 1.0,
        }
    }

    pub fn quantile(kind: ClipKind, q: f64) -> Self {
        Self {
            kind,
            threshold: ThresholdMode::Quantile { q },
            beta: 1.0,
        }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "beta must lie in (0, 1], got {}",
                self.beta
            )));
        }
        match self.threshold {
            ThresholdMode::Absolute { value } if !(value > 0.0 && value.is_finite()) => {
                Err(Error::NonPositiveThreshold(value))
            }
            ThresholdMode::Quantile { q } if !(q > 0.0 && q < 1.0) => Err(Error::InvalidSpec(
                format!("quantile must lie in (0, 1), got {q}"),
            )),
            _ => Ok(()),
        }
    }

    /// Threshold in effect for `a`.
    pub fn resolve_threshold(&self, a: &Matrix) -> Result<f64> {
        match self.threshold {
            ThresholdMode::Absolute { value } => Ok(value),
            ThresholdMode::Quantile { q } => quantile_threshold(a, q),
        }
    }

    pub fn apply(&self, a: &Matrix) -> Result<Matrix> {
        self.validate()?;
        if self.kind == ClipKind::None {
            return Ok(a.clone());
        }
        let t = self.resolve_threshold(a)?;
        match self.kind {
            ClipKind::None => unreachable!(),
            ClipKind::HardCoordinate => hard_clip(a, t),
            ClipKind::Global => global_clip(a, t),
            ClipKind::Spectral => spectral_clip(a, t),
            ClipKind::SmoothShrinkage => smooth_shrinkage(a, t, self.beta),
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveThreshold(t))
    }
}

/// `C_τ(x) = x · min(1, τ/|x|)`.
#[inline]
pub fn hard_clip_scalar(x: f64, tau: f64) -> f64 {
    x.clamp(-tau, tau)
}

/// `S_c(x) = x · e^{−|x|/c}`.
#[inline]
pub fn smooth_shrink_scalar(x: f64, c: f64) -> f64 {
    x * (-x.abs() / c).exp()
}

/// `S_c'(x) = e^{−|x|/c} (1 − |x|/c)`.
#[inline]
pub fn smooth_shrink_derivative(x: f64, c: f64) -> f64 {
    let t = x.abs() / c;
    (-t).exp() * (1.0 - t)
}

pub fn hard_clip(a: &Matrix, tau: f64) -> Result<Matrix> {
    check_threshold(tau)?;
    Ok(a.map(|x| hard_clip_scalar(x, tau)))
}

/// `min(1, c/‖A‖_F) · A`.
pub fn global_clip(a: &Matrix, c: f64) -> Result<Matrix> {
    check_threshold(c)?;
    let nrm = frobenius_norm(a);
    Ok(if nrm <= c { a.clone() } else { a.scale(c / nrm) })
}

/// `Σ min(σ_i, c) u_i v_iᵀ`.
pub fn spectral_clip(a: &Matrix, c: f64) -> Result<Matrix> {
    check_threshold(c)?;
    if a.is_zero() {
        return Ok(a.clone());
    }
    let svd = full_svd(a)?;
    if svd.singular_values[0] <= c {
        return Ok(a.clone());
    }
    Ok(svd.reconstruct_with(|_, s| s.min(c)))
}

/// Entry-wise `β y e^{−|y|/c}`.
pub fn smooth_shrinkage(a: &Matrix, c: f64, beta: f64) -> Result<Matrix> {
    check_threshold(c)?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidSpec(format!("beta must lie in (0, 1], got {beta}")));
    }
    Ok(a.map(|x| beta * smooth_shrink_scalar(x, c)))
}

/// Type-7 quantile of `|A_ij|`, floored at [`QUANTILE_FLOOR`].
pub fn quantile_threshold(a: &Matrix, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidSpec(format!("quantile must lie in (0, 1), got {q}")));
    }
    let mut abs: Vec<f64> = a.as_slice().iter().map(|x| x.abs()).collect();
    Ok(quantile_type7(&mut abs, q)?.max(QUANTILE_FLOOR))
}

/// Type-7 (linear interpolation) sample quantile; reorders `xs`.
pub fn quantile_type7(xs: &mut [f64], q: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let h = (xs.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let (_, &mut x_lo, upper) = xs.select_nth_unstable_by(lo, f64::total_cmp);
    if upper.is_empty() {
        return Ok(x_lo);
    }
    let x_hi = upper.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(x_lo + (h - lo as f64) * (x_hi - x_lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::full_svd;
    use crate::noise::{gaussian_matrix, SeedSpec};
    use std::f64::consts::E;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn hard_clip_examples() {
        assert_eq!(hard_clip(&m(&[&[0.5]]), 1.0).unwrap(), m(&[&[0.5]]));
        assert_eq!(hard_clip(&m(&[&[-3.0]]), 1.0).unwrap(), m(&[&[-1.0]]));
        assert_eq!(
            hard_clip(&m(&[&[2.0, -0.1], &[1.0, 4.0]]), 1.0).unwrap(),
            m(&[&[1.0, -0.1], &[1.0, 1.0]])
        );
        assert_eq!(hard_clip(&m(&[&[1.0]]), 0.0), Err(Error::NonPositiveThreshold(0.0)));
    }

    #[test]
    fn global_clip_examples() {
        let small = m(&[&[0.3, 0.4]]);
        assert_eq!(global_clip(&small, 1.0).unwrap(), small);
        let out = global_clip(&m(&[&[3.0, 4.0]]), 1.0).unwrap();
        assert!((out[(0, 0)] - 0.6).abs() < 1e-15 && (out[(0, 1)] - 0.8).abs() < 1e-15);
        assert!(global_clip(&Matrix::zeros(2, 2), 0.5).unwrap().is_zero());
    }

    #[test]
    fn spectral_clip_examples() {
        let out = spectral_clip(&Matrix::from_diag(&[3.0, 1.0]), 2.0).unwrap();
        let want = Matrix::from_diag(&[2.0, 1.0]);
        assert!(out.sub(&want).unwrap().as_slice().iter().all(|x| x.abs() < 1e-12));

        let a = gaussian_matrix(8, 8, SeedSpec::new(11, 0));
        let s = full_svd(&a).unwrap().singular_values;
        let clipped = spectral_clip(&a, s[1]).unwrap();
        let s2 = full_svd(&clipped).unwrap().singular_values;
        assert!((s2[0] - s[1]).abs() < 1e-10 && (s2[1] - s[1]).abs() < 1e-10);
        for k in 2..8 {
            assert!((s2[k] - s[k]).abs() < 1e-10);
        }

        let same = spectral_clip(&a, s[0] + 1.0).unwrap();
        assert_eq!(same, a);
    }

    #[test]
    fn smooth_shrinkage_examples() {
        assert_eq!(smooth_shrinkage(&m(&[&[0.0]]), 1.0, 1.0).unwrap(), m(&[&[0.0]]));
        let one = smooth_shrinkage(&m(&[&[1.0]]), 1.0, 1.0).unwrap()[(0, 0)];
        assert!((one - 0.367_879_441_171_442_3).abs() < 1e-15);
        // Maximum of S_1 over a fine grid sits at x = 1 with value 1/e.
        let (mut best_x, mut best) = (0.0, 0.0);
        for k in 0..=40_000 {
            let x = k as f64 * 1e-4;
            let y = smooth_shrink_scalar(x, 1.0);
            if y > best {
                best = y;
                best_x = x;
            }
        }
        assert!((best_x - 1.0).abs() <= 1e-4);
        assert!((best - 1.0 / E).abs() < 1e-12);
        assert!(smooth_shrinkage(&m(&[&[1.0]]), 1.0, 0.0).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile_threshold(&m(&[&[1.0, -2.0, 3.0, -4.0]]), 0.5).unwrap(), 2.5);
        for q in [0.1, 0.5, 0.99] {
            assert_eq!(quantile_threshold(&m(&[&[-1.5, 1.5, 1.5]]), q).unwrap(), 1.5);
        }
        assert_eq!(
            quantile_threshold(&Matrix::zeros(2, 2), 0.9).unwrap(),
            QUANTILE_FLOOR
        );
        assert_eq!(quantile_type7(&mut [], 0.5), Err(Error::EmptyMatrix));
        let g = gaussian_matrix(1, 1000, SeedSpec::new(3, 0));
        let t = quantile_threshold(&g, 0.95).unwrap();
        assert!((t - 1.959_963_984_540_054).abs() <= 0.15, "{t}");
    }

    #[test]
    fn quantile_matches_full_sort() {
        let g = gaussian_matrix(7, 13, SeedSpec::new(8, 0));
        let mut sorted: Vec<f64> = g.as_slice().iter().map(|x| x.abs()).collect();
        sorted.sort_by(f64::total_cmp);
        for q in [0.01, 0.25, 0.9, 0.999] {
            let h = (sorted.len() - 1) as f64 * q;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            let want = sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]);
            assert!((quantile_threshold(&g, q).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn spec_apply_and_validation() {
        let a = m(&[&[2.0, -0.5], &[0.25, -8.0]]);
        assert_eq!(ClipSpec::none().apply(&a).unwrap(), a);
        let hard = ClipSpec::quantile(ClipKind::HardCoordinate, 0.5).apply(&a).unwrap();
        let tau = quantile_threshold(&a, 0.5).unwrap();
        assert_eq!(hard, hard_clip(&a, tau).unwrap());
        assert!(ClipSpec::quantile(ClipKind::Global, 1.0).validate().is_err());
        assert!(ClipSpec::absolute(ClipKind::Spectral, -1.0).validate().is_err());
        assert!(ClipSpec::absolute(ClipKind::SmoothShrinkage, 1.0)
            .with_beta(1.5)
            .validate()
            .is_err());
        let json = serde_json::to_string(&ClipSpec::quantile(ClipKind::SmoothShrinkage, 0.99)).unwrap();
        let back: ClipSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.threshold, ThresholdMode::Quantile { q: 0.99 });
    }

    #[test]
    fn tangent_calibration() {
        let tau = 1.7;
        let c_hard = tau / E;
        let at = |y: f64| ((-y / tau).exp(), (c_hard / y).min(1.0));
        let (s, h) = at(tau);
        assert!((s - 1.0 / E).abs() < 1e-15 && (h - 1.0 / E).abs() < 1e-15);
        for k in 1..=200 {
            let y = tau * (1.0 + 0.05 * k as f64);
            let (s, h) = at(y);
            assert!(s < h, "y={y}");
        }
    }
}
