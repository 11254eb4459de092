//! Seeded samplers for the entry-wise contamination model and the low-rank
//! subspace perturbation model.
//!
//! Every stream is a ChaCha20 generator keyed by `seed` with the 64-bit
//! ChaCha stream id set to `stream`. ChaCha is counter based, so a given
//! `(seed, stream)` pair yields the same sequence on every platform and under
//! any thread schedule, and distinct stream ids never overlap.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SeedSpec {
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl SeedSpec {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Same seed, different stream.
    pub const fn with_stream(self, stream: u64) -> Self {
        Self {
            seed: self.seed,
            stream,
        }
    }
}

/// Symmetric heavy-tailed contaminating distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family", deny_unknown_fields)]
pub enum HeavyTail {
    Cauchy { gamma: f64 },
    /// `scale · t_ν`.
    StudentT { nu: f64, scale: f64 },
}

impl HeavyTail {
    pub fn validate(&self) -> Result<()> {
        match *self {
            HeavyTail::Cauchy { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(
                Error::InvalidSpec(format!("cauchy gamma must be positive, got {gamma}")),
            ),
            HeavyTail::StudentT { nu, scale }
                if !(nu > 0.0 && scale > 0.0 && nu.is_finite() && scale.is_finite()) =>
            {
                Err(Error::InvalidSpec(format!(
                    "student-t needs nu > 0 and scale > 0, got nu={nu}, scale={scale}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            HeavyTail::Cauchy { gamma } => {
                let u: f64 = Open01.sample(rng);
                cauchy_inverse_cdf(u, gamma)
            }
            // t₁ is Cauchy; the inverse CDF is exact and much cheaper.
            HeavyTail::StudentT { nu, scale } if nu == 1.0 => {
                let u: f64 = Open01.sample(rng);
                cauchy_inverse_cdf(u, scale)
            }
            HeavyTail::StudentT { nu, scale } => {
                let chi = ChiSquared::new(nu).expect("validated nu");
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    let w: f64 = chi.sample(rng);
                    let t = z / (w / nu).sqrt();
                    if t.is_finite() {
                        return scale * t;
                    }
                }
            }
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            HeavyTail::Cauchy { gamma } => -(PI * gamma).ln() - (x / gamma).powi(2).ln_1p(),
            HeavyTail::StudentT { nu, scale } => {
                let t = x / scale;
                libm::lgamma(0.5 * (nu + 1.0))
                    - libm::lgamma(0.5 * nu)
                    - 0.5 * (nu * PI).ln()
                    - scale.ln()
                    - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Constant `C₁` of the score bound `|d/dt log h(t)| ≤ C₁/|t|`; `ν + 1`
    /// for the Student-t family (Cauchy is `ν = 1`).
    pub fn score_constant(&self) -> f64 {
        match *self {
            HeavyTail::Cauchy { .. } => 2.0,
            HeavyTail::StudentT { nu, .. } => nu + 1.0,
        }
    }

    /// Median of `|H|`.
    pub fn abs_median(&self) -> Option<f64> {
        match *self {
            HeavyTail::Cauchy { gamma } => Some(gamma),
            HeavyTail::StudentT { nu, scale } if nu == 1.0 => Some(scale),
            HeavyTail::StudentT { .. } => None,
        }
    }
}

/// `γ · tan(π(u − 1/2))`.
pub fn cauchy_inverse_cdf(u: f64, gamma: f64) -> f64 {
    gamma * (PI * (u - 0.5)).tan()
}

/// Huber contamination `(1 − α) N(0, σ²) + α H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    pub alpha: f64,
    pub sigma: f64,
    pub heavy: HeavyTail,
}

impl ContaminationSpec {
    pub fn new(alpha: f64, sigma: f64, heavy: HeavyTail) -> Result<Self> {
        let spec = Self {
            alpha,
            sigma,
            heavy,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cauchy(alpha: f64, sigma: f64, gamma: f64) -> Result<Self> {
        Self::new(alpha, sigma, HeavyTail::Cauchy { gamma })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidSpec(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        self.heavy.validate()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let pick: f64 = rng.random();
        if pick < self.alpha {
            self.heavy.sample(rng)
        } else {
            let z: f64 = StandardNormal.sample(rng);
            self.sigma * z
        }
    }

    pub(crate) fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.sample(rng);
        }
    }
}

/// Low-rank spike `λ Σ_{r<K} u_r v_rᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceSpec {
    pub lambda: f64,
    pub rank: usize,
    /// Orthonormalize the sampled directions (`λ U_K V_Kᵀ` with orthonormal
    /// columns) instead of using raw unit-sphere draws.
    #[serde(default)]
    pub orthonormalize: bool,
}

/// Either noise family, for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum NoiseSpec {
    Contamination(ContaminationSpec),
    Subspace(SubspaceSpec),
}

impl NoiseSpec {
    pub fn sample(&self, m: usize, n: usize, seed: SeedSpec) -> Result<Matrix> {
        match self {
            NoiseSpec::Contamination(spec) => sample_contamination(m, n, spec, seed),
            NoiseSpec::Subspace(spec) => sample_subspace(m, n, spec, seed),
        }
    }
}

pub fn sample_contamination(
    m: usize,
    n: usize,
    spec: &ContaminationSpec,
    seed: SeedSpec,
) -> Result<Matrix> {
    spec.validate()?;
    if m == 0 || n == 0 {
        return Err(Error::InvalidSpec(format!("dimensions must be positive, got {m}x{n}")));
    }
    let mut rng = seed.rng();
    let mut data = vec![0.0; m * n];
    spec.fill(&mut rng, &mut data);
    Matrix::new(m, n, data)
}

pub fn sample_scalar_noise(spec: &ContaminationSpec, count: usize, seed: SeedSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = seed.rng();
    let mut out = vec![0.0; count];
    spec.fill(&mut rng, &mut out);
    Ok(out)
}

pub fn sample_subspace(m: usize, n: usize, spec: &SubspaceSpec, seed: SeedSpec) -> Result<Matrix> {
    if spec.rank == 0 {
        return Err(Error::InvalidSpec("subspace rank must be at least 1".into()));
    }
    if spec.rank > m.min(n) {
        return Err(Error::RankTooLarge {
            rank: spec.rank,
            max: m.min(n),
        });
    }
    if !(spec.lambda > 0.0 && spec.lambda.is_finite()) {
        return Err(Error::InvalidSpec(format!(
            "lambda must be positive, got {}",
            spec.lambda
        )));
    }
    let mut rng = seed.rng();
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(spec.rank);
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(spec.rank);
    for _ in 0..spec.rank {
        us.push(unit_sphere(&mut rng, m));
        vs.push(unit_sphere(&mut rng, n));
    }
    if spec.orthonormalize {
        gram_schmidt(&mut us);
        gram_schmidt(&mut vs);
    }
    let mut out = Matrix::zeros(m, n);
    for (u, v) in us.iter().zip(&vs) {
        out.axpy(spec.lambda, &Matrix::outer(u, v))?;
    }
    Ok(out)
}

/// Uniform draw from the unit sphere in `R^dim`.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let nrm = norm2(&v);
        if nrm > 0.0 {
            return v.into_iter().map(|x| x / nrm).collect();
        }
    }
}

/// Matrix with i.i.d. `N(0, 1)` entries.
pub fn gaussian_matrix(m: usize, n: usize, seed: SeedSpec) -> Matrix {
    let mut rng = seed.rng();
    Matrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng))
}

fn gram_schmidt(vs: &mut [Vec<f64>]) {
    for k in 0..vs.len() {
        for _ in 0..2 {
            for j in 0..k {
                let p = dot(&vs[k], &vs[j]);
                let (head, tail) = vs.split_at_mut(k);
                tail[0].iter_mut().zip(&head[j]).for_each(|(a, b)| *a -= p * b);
            }
        }
        let nrm = norm2(&vs[k]);
        vs[k].iter_mut().for_each(|x| *x /= nrm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::full_svd;

    fn median(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        if n % 2 == 1 {
            xs[n / 2]
        } else {
            0.5 * (xs[n / 2 - 1] + xs[n / 2])
        }
    }

    #[test]
    fn gaussian_moments() {
        let spec = ContaminationSpec::cauchy(0.0, 1.0, 1.0).unwrap();
        let e = sample_contamination(64, 64, &spec, SeedSpec::new(1, 0)).unwrap();
        let n = 4096.0;
        let mean = e.as_slice().iter().sum::<f64>() / n;
        let var = e.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 4.0 / n.sqrt(), "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() <= 0.1, "std {}", var.sqrt());
    }

    #[test]
    fn pure_cauchy_abs_median_is_gamma() {
        let gamma = 2.5;
        let spec = ContaminationSpec::cauchy(1.0, 1.0, gamma).unwrap();
        let e = sample_contamination(256, 256, &spec, SeedSpec::new(7, 3)).unwrap();
        let med = median(e.as_slice().iter().map(|x| x.abs()).collect());
        assert!((med / gamma - 1.0).abs() < 0.1, "median {med}");
    }

    #[test]
    fn zero_noise_is_zero_matrix() {
        let spec = ContaminationSpec::cauchy(0.0, 0.0, 1.0).unwrap();
        let e = sample_contamination(3, 4, &spec, SeedSpec::default()).unwrap();
        assert!(e.is_zero());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ContaminationSpec::cauchy(1.5, 1.0, 1.0).is_err());
        assert!(ContaminationSpec::cauchy(0.5, -1.0, 1.0).is_err());
        assert!(ContaminationSpec::cauchy(0.5, 1.0, 0.0).is_err());
        assert!(ContaminationSpec::new(0.5, 1.0, HeavyTail::StudentT { nu: 0.0, scale: 1.0 }).is_err());
    }

    #[test]
    fn cauchy_quartile() {
        assert!((cauchy_inverse_cdf(0.75, 3.0) - 3.0).abs() < 1e-14);
        assert!((cauchy_inverse_cdf(0.25, 3.0) + 3.0).abs() < 1e-14);
    }

    #[test]
    fn determinism_and_stream_independence() {
        let spec = ContaminationSpec::new(0.3, 1.0, HeavyTail::StudentT { nu: 2.0, scale: 1.0 }).unwrap();
        let a = sample_scalar_noise(&spec, 100, SeedSpec::new(5, 1)).unwrap();
        let b = sample_scalar_noise(&spec, 100, SeedSpec::new(5, 1)).unwrap();
        let c = sample_scalar_noise(&spec, 100, SeedSpec::new(5, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn subspace_rank_one_has_sigma_lambda() {
        let spec = SubspaceSpec {
            lambda: 3.0,
            rank: 1,
            orthonormalize: false,
        };
        let e = sample_subspace(10, 7, &spec, SeedSpec::new(2, 0)).unwrap();
        let s = full_svd(&e).unwrap().singular_values;
        assert!((s[0] - 3.0).abs() < 1e-12);
        assert!(s[1] < 1e-12);
    }

    #[test]
    fn subspace_rank_bounds() {
        let zero = SubspaceSpec {
            lambda: 1.0,
            rank: 0,
            orthonormalize: false,
        };
        assert!(sample_subspace(4, 4, &zero, SeedSpec::default()).is_err());
        let big = SubspaceSpec { rank: 5, ..zero };
        assert!(matches!(
            sample_subspace(4, 6, &big, SeedSpec::default()),
            Err(Error::RankTooLarge { rank: 5, max: 4 })
        ));
    }

    #[test]
    fn orthonormal_subspace_has_flat_spectrum() {
        let spec = SubspaceSpec {
            lambda: 2.0,
            rank: 3,
            orthonormalize: true,
        };
        let e = sample_subspace(9, 8, &spec, SeedSpec::new(4, 0)).unwrap();
        let s = full_svd(&e).unwrap().singular_values;
        for k in 0..3 {
            assert!((s[k] - 2.0).abs() < 1e-12);
        }
        assert!(s[3] < 1e-12);
    }

    #[test]
    fn heavy_densities_normalize() {
        for h in [
            HeavyTail::Cauchy { gamma: 1.5 },
            HeavyTail::StudentT { nu: 3.0, scale: 2.0 },
        ] {
            // Trapezoid over a wide window; the tails beyond are tiny for t_3
            // and accounted for analytically for Cauchy.
            let (a, b, n) = (-2000.0, 2000.0, 400_000);
            let hstep = (b - a) / n as f64;
            let mut s = 0.5 * (h.pdf(a) + h.pdf(b));
            for k in 1..n {
                s += h.pdf(a + k as f64 * hstep);
            }
            let total = s * hstep;
            let tail = match h {
                HeavyTail::Cauchy { gamma } => 2.0 * (gamma / b).atan() / PI,
                _ => 0.0,
            };
            assert!((total + tail - 1.0).abs() < 1e-5, "{h:?}: {total}");
        }
    }
}
