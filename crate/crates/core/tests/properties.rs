//! Randomized invariants of the operators, samplers and diagnostics.

use proptest::prelude::*;
use specclip::bayes::{posterior_mean_oracle, surrogate, ChannelSpec};
use specclip::clip::{global_clip, hard_clip, hard_clip_scalar, smooth_shrink_scalar, smooth_shrinkage, spectral_clip};
use specclip::io::{format_g17, matrix_from_bin, matrix_from_csv, matrix_to_bin, matrix_to_csv};
use specclip::linalg::{entry_max_norm, frobenius_norm, full_svd, msign, operator_norm, MsignMethod};
use specclip::localization::localization_ratio;
use specclip::noise::{gaussian_matrix, sample_contamination, sample_scalar_noise, ContaminationSpec, HeavyTail, SeedSpec};
use specclip::Matrix;

fn matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(m, n)| {
        prop::collection::vec(-50.0f64..50.0, m * n).prop_map(move |data| Matrix::new(m, n, data).unwrap())
    })
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scalar_maps_are_odd_and_lipschitz(x in -1e3f64..1e3, y in -1e3f64..1e3, t in 1e-3f64..1e2) {
        prop_assert_eq!(hard_clip_scalar(-x, t), -hard_clip_scalar(x, t));
        prop_assert_eq!(smooth_shrink_scalar(-x, t), -smooth_shrink_scalar(x, t));
        let slack = 1e-12 * (x.abs() + y.abs() + 1.0);
        prop_assert!((hard_clip_scalar(x, t) - hard_clip_scalar(y, t)).abs() <= (x - y).abs() + slack);
        prop_assert!((smooth_shrink_scalar(x, t) - smooth_shrink_scalar(y, t)).abs() <= (x - y).abs() + slack);
    }

    #[test]
    fn smooth_factor_meets_tangent_calibrated_hard_factor(tau in 1e-2f64..1e2, k in 1.0f64..50.0) {
        // Hard clipping at c = τ/e and shrinkage with temperature τ share the
        // factor 1/e at |y| = τ; beyond it the smooth factor is smaller.
        let c_hard = tau / std::f64::consts::E;
        let hard_factor = |y: f64| (c_hard / y).min(1.0);
        let smooth_factor = |y: f64| (-y / tau).exp();
        prop_assert!((hard_factor(tau) - smooth_factor(tau)).abs() <= 1e-15);
        let y = tau * (1.0 + k / 10.0);
        prop_assert!(smooth_factor(y) < hard_factor(y));
    }

    #[test]
    fn operator_norm_guarantees(a in matrix(8), t in 0.1f64..20.0, beta in 0.05f64..=1.0) {
        prop_assert!(entry_max_norm(&hard_clip(&a, t).unwrap()) <= t);
        prop_assert!(frobenius_norm(&global_clip(&a, t).unwrap()) <= t * (1.0 + 1e-12));
        let s = spectral_clip(&a, t).unwrap();
        if !s.is_zero() {
            prop_assert!(operator_norm(&s).unwrap() <= t * (1.0 + 1e-10));
        }
        let bound = beta * t / std::f64::consts::E;
        prop_assert!(entry_max_norm(&smooth_shrinkage(&a, t, beta).unwrap()) <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn svd_is_sorted_orthonormal_and_tight(a in matrix(9)) {
        let svd = full_svd(&a).unwrap();
        let s = &svd.singular_values;
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.iter().all(|&v| v >= 0.0));
        let scale = frobenius_norm(&a).max(1.0);
        prop_assert!(max_abs_diff(&svd.reconstruct(), &a) <= 1e-12 * scale * 10.0);
        for q in [&svd.u, &svd.v] {
            let gram = q.transpose().matmul(q).unwrap();
            prop_assert!(max_abs_diff(&gram, &Matrix::identity(gram.rows())) <= 1e-12);
        }
    }

    #[test]
    fn msign_contract(seed in 0u64..1000, m in 2usize..10, n in 2usize..10) {
        let a = gaussian_matrix(m, n, SeedSpec::new(seed, 0));
        let q = msign(&a, MsignMethod::ExactSvd).unwrap();
        let qq = msign(&q, MsignMethod::ExactSvd).unwrap();
        prop_assert!(frobenius_norm(&q.sub(&qq).unwrap()) <= 1e-8);
        prop_assert!((operator_norm(&q).unwrap() - 1.0).abs() <= 1e-8);
        prop_assert!(frobenius_norm(&q).powi(2) <= m.min(n) as f64 + 1e-8);
    }

    #[test]
    fn weyl_inequality(seed in 0u64..1000, scale in 1e-3f64..10.0) {
        let a = gaussian_matrix(7, 5, SeedSpec::new(seed, 1));
        let e = gaussian_matrix(7, 5, SeedSpec::new(seed, 2)).scale(scale);
        let s = |x: &Matrix| full_svd(x).unwrap().singular_values[0];
        let lhs = (s(&a.add(&e).unwrap()) - s(&a)).abs();
        prop_assert!(lhs <= operator_norm(&e).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn localization_ratio_is_scale_invariant(seed in 0u64..1000, c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3]) {
        let g = gaussian_matrix(6, 5, SeedSpec::new(seed, 3));
        let svd = full_svd(&g).unwrap();
        let (u, v) = (svd.left_vector(0), svd.right_vector(0));
        let e = sample_contamination(6, 5, &ContaminationSpec::cauchy(0.2, 1.0, 1.0).unwrap(), SeedSpec::new(seed, 4)).unwrap();
        let r = localization_ratio(&u, &v, &e).unwrap();
        let rc = localization_ratio(&u, &v, &e.scale(c)).unwrap();
        prop_assert!((rc - r).abs() <= 1e-12 * r);
        // Power-of-two scaling is exact in floating point.
        prop_assert_eq!(localization_ratio(&u, &v, &e.scale(-8.0)).unwrap(), r);
    }

    #[test]
    fn samplers_are_deterministic(seed in any::<u64>(), stream in any::<u64>()) {
        let spec = ContaminationSpec::new(0.3, 1.0, HeavyTail::StudentT { nu: 3.0, scale: 2.0 }).unwrap();
        let a = sample_contamination(4, 3, &spec, SeedSpec::new(seed, stream)).unwrap();
        let b = sample_contamination(4, 3, &spec, SeedSpec::new(seed, stream)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn g17_round_trips(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        prop_assert_eq!(format_g17(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn matrix_files_round_trip(a in matrix(6)) {
        prop_assert_eq!(&matrix_from_csv(&matrix_to_csv(&a)).unwrap(), &a);
        prop_assert_eq!(&matrix_from_bin(&matrix_to_bin(&a)).unwrap(), &a);
    }

    #[test]
    fn surrogate_is_odd_and_multiplicative(y1 in 0.0f64..50.0, y2 in 0.0f64..50.0, tau in 0.1f64..20.0) {
        prop_assert_eq!(surrogate(-y1, 0.7, tau), -surrogate(y1, 0.7, tau));
        // Retention factor e^{-y/τ} turns sums into products.
        let pi = |y: f64| (-y / tau).exp();
        prop_assert!((pi(y1 + y2) - pi(y1) * pi(y2)).abs() <= 1e-15);
        prop_assert!(surrogate(y1, 1.0, tau) <= tau / std::f64::consts::E * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn posterior_mean_is_odd(y in 0.0f64..60.0, alpha in 0.01f64..0.99) {
        let spec = ChannelSpec::new(1.0, ContaminationSpec::cauchy(alpha, 1.0, 1.0).unwrap()).unwrap();
        let plus = posterior_mean_oracle(y, &spec).unwrap().posterior_mean;
        let minus = posterior_mean_oracle(-y, &spec).unwrap().posterior_mean;
        prop_assert!((plus + minus).abs() <= 1e-9 * (1.0 + plus.abs()));
    }
}

#[test]
fn noise_signs_are_balanced() {
    const N: usize = 200_000;
    let tails = [
        HeavyTail::Cauchy { gamma: 1.0 },
        HeavyTail::StudentT { nu: 1.0, scale: 3.0 },
        HeavyTail::StudentT { nu: 2.0, scale: 1.0 },
    ];
    for (k, heavy) in tails.into_iter().enumerate() {
        let spec = ContaminationSpec::new(0.5, 1.0, heavy).unwrap();
        let xs = sample_scalar_noise(&spec, N, SeedSpec::new(11, k as u64)).unwrap();
        let mean_sign = xs.iter().map(|x| x.signum()).sum::<f64>() / N as f64;
        assert!(mean_sign.abs() <= 4.0 / (N as f64).sqrt(), "{heavy:?}: {mean_sign}");
    }
}
