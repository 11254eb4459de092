//! Dense numerics on [`Matrix`]: norms, one-sided Jacobi SVD, power iteration
//! for the top singular triplet, spectral gap and the matrix-sign operator.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, Matrix};
use serde::{Deserialize, Serialize};

/// Largest `min(rows, cols)` accepted by [`full_svd`] by default.
pub const DEFAULT_SVD_MAX_DIM: usize = 512;
/// Relative gap below which [`spectral_gap`] flags a degenerate spectrum.
pub const DEFAULT_GAP_TOL: f64 = 1e-8;
/// Singular values at or below `RANK_TOL * sigma1` are dropped by `msign`.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Quintic Newton–Schulz coefficients popularized by the Muon reference
/// implementation. Fast, but the output singular values oscillate in about
/// `[0.68, 1.14]` instead of converging to 1.
pub const MUON_NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Per-iteration minimax odd quintics for the interval `[0.003, 1]`: after five
/// steps every singular value of `A / ‖A‖_F` in that interval lands in
/// `[0.995, 1.005]`. Each triple is the best uniform approximation of 1 on the
/// image interval of the previous step.
pub const CONVERGENT_NS_SCHEDULE: [(f64, f64, f64); 5] = [
    (8.383674389708455, -24.765908442691163, 18.357083698493113),
    (4.043420832749741, -3.0114052645923395, 0.5695121937977821),
    (3.5055707526491457, -2.626653983467106, 0.5257194394583812),
    (2.4901157820166415, -1.8342750176992944, 0.4368347205187084),
    (1.9177762133487228, -1.2967501591323887, 0.379704876624967),
];

/// Classic quintic with `p(1) = 1`, `p'(1) = p''(1) = 0`; used past the end
/// of the convergent schedule.
const POLISH_NS_COEFFS: (f64, f64, f64) = (1.875, -1.25, 0.375);

/// Coefficient schedule for [`newton_schulz`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsSchedule {
    /// [`CONVERGENT_NS_SCHEDULE`], then [`POLISH_NS_COEFFS`].
    #[default]
    Convergent,
    /// [`MUON_NS_COEFFS`] at every iteration.
    Muon,
}

impl NsSchedule {
    pub fn coeffs(self, iteration: usize) -> (f64, f64, f64) {
        match self {
            NsSchedule::Muon => MUON_NS_COEFFS,
            NsSchedule::Convergent => CONVERGENT_NS_SCHEDULE
                .get(iteration)
                .copied()
                .unwrap_or(POLISH_NS_COEFFS),
        }
    }

    /// Post-check tolerance on `|σ_i − 1|`.
    pub fn default_tol(self) -> f64 {
        match self {
            NsSchedule::Convergent => 0.01,
            NsSchedule::Muon => 0.35,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SvdOptions {
    pub max_dim: usize,
    pub max_sweeps: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            max_dim: DEFAULT_SVD_MAX_DIM,
            max_sweeps: 80,
        }
    }
}

/// Thin SVD `A = U diag(σ) Vᵀ` with `r = min(m, n)` triplets.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    /// `m x r`, orthonormal columns.
    pub u: Matrix,
    /// `n x r`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn left_vector(&self, i: usize) -> Vec<f64> {
        self.u.col(i)
    }

    pub fn right_vector(&self, i: usize) -> Vec<f64> {
        self.v.col(i)
    }

    /// `Σ_{i<k} w(σ_i) u_i v_iᵀ`.
    pub fn reconstruct_with(&self, weight: impl Fn(usize, f64) -> f64) -> Matrix {
        let (m, n, r) = (self.u.rows(), self.v.rows(), self.rank());
        let mut out = Matrix::zeros(m, n);
        for k in 0..r {
            let w = weight(k, self.singular_values[k]);
            if w == 0.0 {
                continue;
            }
            for i in 0..m {
                let ui = self.u[(i, k)] * w;
                if ui == 0.0 {
                    continue;
                }
                let row = &mut out.as_mut_slice()[i * n..(i + 1) * n];
                for (j, o) in row.iter_mut().enumerate() {
                    *o += ui * self.v[(j, k)];
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_with(|_, s| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGapInfo {
    pub sigma1: f64,
    pub sigma2: f64,
    pub gap: f64,
    /// Set when `gap < gap_tol * sigma1`.
    pub degenerate: bool,
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    // Scaled accumulation keeps huge Cauchy entries from overflowing.
    let scale = entry_max_norm(a);
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = a.as_slice().iter().map(|x| (x / scale).powi(2)).sum();
    scale * s.sqrt()
}

/// `max_ij |A_ij|`.
pub fn entry_max_norm(a: &Matrix) -> f64 {
    a.as_slice().iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn full_svd(a: &Matrix) -> Result<SvdResult> {
    full_svd_with(a, &SvdOptions::default())
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn full_svd_with(a: &Matrix, opts: &SvdOptions) -> Result<SvdResult> {
    let dim = a.min_dim();
    if dim > opts.max_dim {
        return Err(Error::DimensionTooLarge {
            dim,
            max: opts.max_dim,
        });
    }
    if let Some(k) = a.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            row: k / a.cols(),
            col: k % a.cols(),
        });
    }
    // Squared column norms overflow beyond ~1e154; a power-of-two rescale
    // is exact and is undone on the singular values.
    let peak = entry_max_norm(a);
    let scale = if peak > 1e150 || (peak > 0.0 && peak < 1e-150) {
        2f64.powi(-(peak.log2().round() as i32))
    } else {
        1.0
    };
    let transposed = a.rows() < a.cols();
    let mut work = if transposed { a.transpose() } else { a.clone() };
    if scale != 1.0 {
        work = work.scale(scale);
    }
    let (m, n) = work.shape();

    // Column-major copy: cols[j] is column j of the working matrix.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| work.col(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();

    // Rotation threshold at the rounding floor of a length-m dot product.
    let eps = f64::EPSILON;
    let rot_tol = (m as f64) * eps;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut rotated = false;
        // Norms are updated analytically within a sweep and refreshed here.
        for (nrm, c) in norms.iter_mut().zip(&cols) {
            *nrm = dot(c, c);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= rot_tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = vcols.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: sweeps,
            residual: f64::NAN,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sigmas: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    order.sort_by(|&i, &j| sigmas[j].total_cmp(&sigmas[i]));

    let sigma_max = order.first().map_or(0.0, |&i| sigmas[i]);
    let zero_tol = sigma_max * (m as f64) * eps;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_out: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s_out = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &k) in order.iter().enumerate() {
        let s = sigmas[k];
        if s > zero_tol && s > 0.0 {
            u_cols.push(cols[k].iter().map(|x| x / s).collect());
            s_out.push(s);
        } else {
            u_cols.push(vec![0.0; m]);
            s_out.push(if s > 0.0 { s } else { 0.0 });
            missing.push(slot);
        }
        v_out.push(vcols[k].clone());
    }
    complete_orthonormal(&mut u_cols, &missing);

    // Sign convention: first non-negligible entry of each u_i is positive.
    for k in 0..n {
        if let Some(&first) = u_cols[k].iter().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                u_cols[k].iter_mut().for_each(|x| *x = -*x);
                v_out[k].iter_mut().for_each(|x| *x = -*x);
            }
        }
    }

    if scale != 1.0 {
        s_out.iter_mut().for_each(|s| *s /= scale);
    }
    let u = columns_to_matrix(&u_cols, m);
    let v = columns_to_matrix(&v_out, n);
    Ok(if transposed {
        SvdResult {
            singular_values: s_out,
            u: v,
            v: u,
        }
        .normalize_signs()
    } else {
        SvdResult {
            singular_values: s_out,
            u,
            v,
        }
    })
}

impl SvdResult {
    fn normalize_signs(mut self) -> Self {
        for k in 0..self.rank() {
            let first = (0..self.u.rows())
                .map(|i| self.u[(i, k)])
                .find(|x| x.abs() > 1e-12);
            if matches!(first, Some(f) if f < 0.0) {
                for i in 0..self.u.rows() {
                    self.u[(i, k)] = -self.u[(i, k)];
                }
                for j in 0..self.v.rows() {
                    self.v[(j, k)] = -self.v[(j, k)];
                }
            }
        }
        self
    }
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

fn columns_to_matrix(cols: &[Vec<f64>], rows: usize) -> Matrix {
    Matrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Fills the listed slots with unit vectors orthogonal to every other column.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = cols[0].len();
    let mut candidate = 0;
    for &slot in missing {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of Gram–Schmidt for stability.
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == slot || c.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let p = dot(&e, c);
                    e.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
                }
            }
            let nrm = norm2(&e);
            if nrm > 1e-8 {
                cols[slot] = e.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

/// Result of [`top_singular_triplet`].
#[derive(Debug, Clone)]
pub struct TopTriplet {
    pub sigma1: f64,
    pub u1: Vec<f64>,
    pub v1: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on `AᵀA` for the leading singular triplet.
///
/// Starts from the normalized all-ones vector and performs one seeded random
/// restart if progress stalls. Returns the best iterate with `converged =
/// false` when `max_iter` is exhausted; callers that need a hard failure can
/// use [`TopTriplet::into_result`].
pub fn top_singular_triplet(a: &Matrix, tol: f64, max_iter: usize) -> Result<TopTriplet> {
    if a.is_zero() {
        return Err(Error::ZeroMatrix);
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidSpec(format!("tol must be positive, got {tol}")));
    }
    let n = a.cols();
    let start = vec![1.0 / (n as f64).sqrt(); n];
    let first = power_run(a, start, tol, max_iter);
    if first.converged {
        return Ok(first);
    }
    // Deterministic restart from a fixed pseudo-random vector.
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let restart: Vec<f64> = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let second = power_run(a, restart, tol, max_iter);
    Ok(if second.converged || second.sigma1 > first.sigma1 {
        TopTriplet {
            iterations: first.iterations + second.iterations,
            ..second
        }
    } else {
        first
    })
}

impl TopTriplet {
    pub fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                iterations: self.iterations,
                residual: f64::NAN,
            })
        }
    }
}

fn power_run(a: &Matrix, start: Vec<f64>, tol: f64, max_iter: usize) -> TopTriplet {
    let mut v = start;
    let nv = norm2(&v);
    if nv == 0.0 {
        v = vec![1.0; a.cols()];
    }
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut best = TopTriplet {
        sigma1: 0.0,
        u1: vec![0.0; a.rows()],
        v1: v.clone(),
        iterations: 0,
        converged: false,
    };
    for it in 1..=max_iter {
        let mut u = a.matvec(&v);
        let su = norm2(&u);
        if su == 0.0 {
            break;
        }
        u.iter_mut().for_each(|x| *x /= su);
        let mut w = a.matvec_t(&u);
        let sigma = norm2(&w);
        if sigma == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= sigma);

        // Residuals: ‖A w − σ u'‖ and ‖Aᵀ u' − σ w‖ with u' = A w / ‖A w‖.
        let mut u_new = a.matvec(&w);
        let s_new = norm2(&u_new);
        u_new.iter_mut().for_each(|x| *x /= s_new);
        let av = a.matvec(&w);
        let r1 = av
            .iter()
            .zip(&u_new)
            .map(|(x, y)| (x - s_new * y).powi(2))
            .sum::<f64>()
            .sqrt();
        let atu = a.matvec_t(&u_new);
        let r2 = atu
            .iter()
            .zip(&w)
            .map(|(x, y)| (x - s_new * y).powi(2))
            .sum::<f64>()
            .sqrt();
        best = TopTriplet {
            sigma1: s_new,
            u1: u_new,
            v1: w.clone(),
            iterations: it,
            converged: r1 <= tol * s_new && r2 <= tol * s_new,
        };
        if best.converged {
            break;
        }
        v = w;
    }
    if let Some(&first) = best.u1.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            best.u1.iter_mut().for_each(|x| *x = -*x);
            best.v1.iter_mut().for_each(|x| *x = -*x);
        }
    }
    best
}

/// `σ₁ − σ₂`, flagging `degenerate` when the gap is below `gap_tol · σ₁`.
pub fn spectral_gap(a: &Matrix) -> Result<SpectralGapInfo> {
    spectral_gap_with(a, DEFAULT_GAP_TOL)
}

pub fn spectral_gap_with(a: &Matrix, gap_tol: f64) -> Result<SpectralGapInfo> {
    if a.min_dim() < 2 {
        return Err(Error::InvalidSpec(
            "spectral gap needs min dimension >= 2".into(),
        ));
    }
    let svd = full_svd(a)?;
    Ok(gap_from_values(&svd.singular_values, gap_tol))
}

pub(crate) fn gap_from_values(s: &[f64], gap_tol: f64) -> SpectralGapInfo {
    let (sigma1, sigma2) = (s[0], s[1]);
    let gap = (sigma1 - sigma2).max(0.0);
    SpectralGapInfo {
        sigma1,
        sigma2,
        gap,
        degenerate: gap < gap_tol * sigma1 || sigma1 == 0.0,
    }
}

/// `Σ σ_i`.
pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    Ok(full_svd(a)?.singular_values.iter().sum())
}

/// `σ₁` via the full SVD.
pub fn operator_norm(a: &Matrix) -> Result<f64> {
    Ok(full_svd(a)?.singular_values[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", deny_unknown_fields)]
pub enum MsignMethod {
    #[default]
    ExactSvd,
    NewtonSchulz {
        iters: usize,
        #[serde(default)]
        schedule: NsSchedule,
    },
}

impl MsignMethod {
    pub fn newton_schulz(iters: usize) -> Self {
        MsignMethod::NewtonSchulz {
            iters,
            schedule: NsSchedule::Convergent,
        }
    }
}

/// Matrix sign `U Vᵀ`.
pub fn msign(a: &Matrix, method: MsignMethod) -> Result<Matrix> {
    match method {
        MsignMethod::ExactSvd => msign_exact(a, DEFAULT_RANK_TOL),
        MsignMethod::NewtonSchulz { iters, schedule } => {
            newton_schulz(a, iters, schedule, schedule.default_tol())
        }
    }
}

/// `U Vᵀ` over the singular triplets with `σ_i > rank_tol · σ₁`.
pub fn msign_exact(a: &Matrix, rank_tol: f64) -> Result<Matrix> {
    if a.is_zero() {
        return Err(Error::ZeroMatrix);
    }
    let svd = full_svd(a)?;
    let cutoff = rank_tol * svd.singular_values[0];
    Ok(svd.reconstruct_with(|_, s| if s > cutoff { 1.0 } else { 0.0 }))
}

/// Newton–Schulz followed by an SVD post-check that every one of the
/// `min(m, n)` output singular values lies in `1 ± ns_tol`.
pub fn newton_schulz(a: &Matrix, iters: usize, schedule: NsSchedule, ns_tol: f64) -> Result<Matrix> {
    let out = newton_schulz_raw(a, iters, schedule)?;
    let worst = full_svd(&out)?
        .singular_values
        .iter()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);
    if !(worst <= ns_tol) {
        return Err(Error::NoConvergence {
            iterations: iters,
            residual: worst,
        });
    }
    Ok(out)
}

/// Odd-polynomial iteration `X ← aX + b(XXᵀ)X + c(XXᵀ)²X` on `A / ‖A‖_F`,
/// run on the wide orientation so `XXᵀ` is the smaller Gram. No post-check.
pub fn newton_schulz_raw(a: &Matrix, iters: usize, schedule: NsSchedule) -> Result<Matrix> {
    if a.is_zero() {
        return Err(Error::ZeroMatrix);
    }
    let tall = a.rows() > a.cols();
    let mut x = if tall { a.transpose() } else { a.clone() };
    let nrm = frobenius_norm(&x);
    x = x.scale(1.0 / nrm);
    for it in 0..iters {
        let (ca, cb, cc) = schedule.coeffs(it);
        let gram = x.matmul(&x.transpose())?;
        let gram2 = gram.matmul(&gram)?;
        let mut poly = gram.scale(cb);
        poly.axpy(cc, &gram2)?;
        let mut next = poly.matmul(&x)?;
        next.axpy(ca, &x)?;
        x = next;
    }
    Ok(if tall { x.transpose() } else { x })
}
