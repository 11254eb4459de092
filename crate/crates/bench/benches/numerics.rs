use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use specclip::bayes::{posterior_mean_oracle, ChannelSpec};
use specclip::clip::{ClipKind, ClipSpec};
use specclip::harness::{make_problem, run_training, ClipChoice, Method, RunConfig};
use specclip::linalg::{full_svd, msign, newton_schulz_raw, MsignMethod, NsSchedule};
use specclip::localization::{delocalized_signal, Localizer};
use specclip::noise::{gaussian_matrix, sample_contamination, ContaminationSpec, SeedSpec};
use std::hint::black_box;

fn svd_and_msign(c: &mut Criterion) {
    let mut group = c.benchmark_group("linalg");
    for dim in [16usize, 32, 64] {
        let a = gaussian_matrix(dim, dim, SeedSpec::new(0, dim as u64));
        group.bench_with_input(BenchmarkId::new("full_svd", dim), &a, |b, a| b.iter(|| full_svd(black_box(a)).unwrap()));
        group.bench_with_input(BenchmarkId::new("msign_exact", dim), &a, |b, a| {
            b.iter(|| msign(black_box(a), MsignMethod::ExactSvd).unwrap())
        });
        // Raw iteration only: the SVD post-check would dominate the timing.
        group.bench_with_input(BenchmarkId::new("newton_schulz5_raw", dim), &a, |b, a| {
            b.iter(|| newton_schulz_raw(black_box(a), 5, NsSchedule::default()).unwrap())
        });
    }
    group.finish();
}

fn clipping(c: &mut Criterion) {
    let noise = ContaminationSpec::cauchy(0.1, 1.0, 1.0).unwrap();
    let a = sample_contamination(64, 64, &noise, SeedSpec::new(1, 0)).unwrap();
    let mut group = c.benchmark_group("clip_64x64");
    for (name, spec) in [
        ("hard_quantile", ClipSpec::quantile(ClipKind::HardCoordinate, 0.99)),
        ("smooth_quantile", ClipSpec::quantile(ClipKind::SmoothShrinkage, 0.99)),
        ("global", ClipSpec::absolute(ClipKind::Global, 10.0)),
        ("spectral", ClipSpec::absolute(ClipKind::Spectral, 10.0)),
    ] {
        group.bench_function(name, |b| b.iter(|| spec.apply(black_box(&a)).unwrap()));
    }
    group.finish();
}

fn diagnostics(c: &mut Criterion) {
    let g = delocalized_signal(64, 64, 10.0, 0.05, SeedSpec::new(2, 0));
    let loc = Localizer::new(&g, 256, SeedSpec::new(2, 1)).unwrap();
    let e = gaussian_matrix(64, 64, SeedSpec::new(2, 2));
    c.bench_function("localizer_build_64x64_256draws", |b| {
        b.iter(|| Localizer::new(black_box(&g), 256, SeedSpec::new(2, 1)).unwrap())
    });
    c.bench_function("localization_report_64x64", |b| b.iter(|| loc.report(black_box(&e)).unwrap()));
    let spec = ChannelSpec::new(1.0, ContaminationSpec::cauchy(0.1, 1.0, 1.0).unwrap()).unwrap();
    c.bench_function("posterior_mean_y20", |b| b.iter(|| posterior_mean_oracle(black_box(20.0), &spec).unwrap()));
}

fn training(c: &mut Criterion) {
    let problem = make_problem(32, 32, 128, 0).unwrap();
    let mut group = c.benchmark_group("run_training_100_steps");
    group.sample_size(10);
    for (name, method, clip) in [
        ("gd_hard", Method::Gd, ClipChoice::Hard),
        ("gd_smooth", Method::Gd, ClipChoice::Smooth),
        ("spectral_gd_smooth", Method::SpectralGd, ClipChoice::Smooth),
    ] {
        let cfg = RunConfig { steps: 100, ..RunConfig::new(method, clip, 0.01, 0.99, 0.5) };
        group.bench_function(name, |b| b.iter(|| run_training(&problem, &cfg, SeedSpec::new(0, 1)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, svd_and_msign, clipping, diagnostics, training);
criterion_main!(benches);
