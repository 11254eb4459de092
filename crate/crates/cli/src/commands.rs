//! Command implementations. Every config is parsed and validated before
//! the output directory is touched, so a rejected run leaves nothing behind.

use crate::config::{self, BayesConfig, DiagnoseConfig, NoiseConfig, NoiseSource, PlanConfig, SignalSource};
use crate::error::{CliError, EXIT_VERIFY_FAILED};
use crate::manifest::OutputDir;
use crate::{BenchArgs, ClipArgs, GlobalOpts};
use serde::Serialize;
use serde_json::{json, Value};
use specclip::bayes::{posterior_collapse_check, surrogate_error_profile};
use specclip::clip::{ClipSpec, ThresholdMode};
use specclip::harness::{grid_sweep, SweepConfig};
use specclip::io::{read_matrix, write_matrix, MatrixFormat};
use specclip::linalg::{entry_max_norm, frobenius_norm, operator_norm};
use specclip::localization::{
    delocalized_signal, hill_estimator, spectral_max_spearman, taylor_prediction, Localizer,
};
use specclip::noise::{gaussian_matrix, SeedSpec};
use specclip::optim::{theorem_plan, ThresholdKind, TheoremPlan};
use specclip::verify::{run_lemma_suite, VerifyConfig};
use specclip::Matrix;
use std::path::Path;

// Stream layout shared by `diagnose` and `noise`.
const STREAM_BASELINE: u64 = 0;
const STREAM_SIGNAL: u64 = 1;
const STREAM_NOISE: u64 = 2;

#[derive(Debug, Serialize)]
struct Norms {
    max_abs: f64,
    frobenius: f64,
    sigma1: f64,
}

fn norms(a: &Matrix) -> Result<Norms, CliError> {
    Ok(Norms {
        max_abs: entry_max_norm(a),
        frobenius: frobenius_norm(a),
        sigma1: if a.is_zero() { 0.0 } else { operator_norm(a)? },
    })
}

fn print_json(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values serialize"));
}

pub fn clip(g: &GlobalOpts, a: &ClipArgs) -> Result<(), CliError> {
    let threshold = match (a.threshold, a.quantile) {
        (Some(value), None) => ThresholdMode::Absolute { value },
        (None, Some(q)) => ThresholdMode::Quantile { q },
        _ => return Err(CliError::config("give exactly one of --threshold and --quantile")),
    };
    let spec = ClipSpec {
        kind: a.kind.into(),
        threshold,
        beta: a.beta,
    };
    spec.validate()?;
    let input = read_matrix(&a.input)?;
    let resolved = spec.resolve_threshold(&input)?;
    let output = spec.apply(&input)?;
    let format: MatrixFormat = g.format.into();
    write_matrix(&a.output, &output, format)?;
    print_json(&json!({
        "spec": spec,
        "threshold": resolved,
        "before": norms(&input)?,
        "after": norms(&output)?,
    }));
    Ok(())
}

fn seed_of(g: &GlobalOpts, config_seed: u64) -> u64 {
    g.seed.unwrap_or(config_seed)
}

/// Config seed replaced by `--seed`, reflected in the hashed config.
fn override_seed(canonical: &mut Value, seed: u64) {
    canonical["seed"] = json!(seed);
}

fn nonempty(m: usize, n: usize) -> Result<(), CliError> {
    if m == 0 || n == 0 {
        return Err(CliError::config(format!("dimensions must be positive, got {m}x{n}")));
    }
    Ok(())
}

pub fn diagnose(g: &GlobalOpts, path: &Path) -> Result<(), CliError> {
    let (cfg, mut canonical): (DiagnoseConfig, Value) = config::load(path)?;
    let seed = seed_of(g, cfg.seed);
    override_seed(&mut canonical, seed);
    let signal = match &cfg.signal {
        SignalSource::File { path } => read_matrix(path)?,
        SignalSource::Delocalized { m, n, strength, noise } => {
            nonempty(*m, *n)?;
            delocalized_signal(*m, *n, *strength, *noise, SeedSpec::new(seed, STREAM_SIGNAL))
        }
        SignalSource::Gaussian { m, n } => {
            nonempty(*m, *n)?;
            gaussian_matrix(*m, *n, SeedSpec::new(seed, STREAM_SIGNAL))
        }
    };
    let (m, n) = signal.shape();
    let samples: Vec<Matrix> = match &cfg.noise {
        NoiseSource::File { path } => vec![read_matrix(path)?],
        NoiseSource::Model { spec } => {
            if cfg.realizations == 0 {
                return Err(CliError::config("realizations must be at least 1"));
            }
            (0..cfg.realizations as u64)
                .map(|k| spec.sample(m, n, SeedSpec::new(seed, STREAM_NOISE + k)))
                .collect::<Result<_, _>>()?
        }
    };
    let localizer = Localizer::with_direction(&signal, cfg.direction, cfg.draws, SeedSpec::new(seed, STREAM_BASELINE))?;
    let e = &samples[0];
    let report = localizer.report(e)?;
    let taylor = taylor_prediction(&signal, e)?;
    let r_hats: Vec<f64> = samples
        .iter()
        .map(|s| localizer.report(s).map(|r| r.normalized_r_hat))
        .collect::<Result<_, _>>()?;
    // Rank statistics are undefined for a single realization; the Hill
    // estimate is reported only when the entry count supports it.
    let spearman = if samples.len() >= 3 { Some(spectral_max_spearman(&samples)?) } else { None };
    let entries: Vec<f64> = samples.iter().flat_map(|s| s.as_slice().iter().copied()).collect();
    let hill = hill_estimator(&entries, None).ok();
    let out = json!({
        "r_max": report.r_max,
        "r": report.r,
        "R": report.ratio_r,
        "baseline_median": report.baseline_median,
        "R_hat": report.normalized_r_hat,
        "R_hat_median": median(&r_hats),
        "sigma1": taylor.sigma1_base,
        "gap": taylor.gap,
        "spearman": spearman,
        "hill": hill,
        "direction": report.direction,
        "realizations": samples.len(),
        "taylor": taylor,
    });
    let mut dir = OutputDir::create(&g.out_dir)?;
    dir.write_json("diagnose.json", &out)?;
    dir.finish("diagnose", canonical, vec![seed])?;
    print_json(&out);
    Ok(())
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

pub fn noise(g: &GlobalOpts, path: &Path) -> Result<(), CliError> {
    let (cfg, mut canonical): (NoiseConfig, Value) = config::load(path)?;
    let seed = seed_of(g, cfg.seed);
    override_seed(&mut canonical, seed);
    nonempty(cfg.m, cfg.n)?;
    if cfg.count == 0 {
        return Err(CliError::config("count must be at least 1"));
    }
    let samples: Vec<Matrix> = (0..cfg.count as u64)
        .map(|k| cfg.spec.sample(cfg.m, cfg.n, SeedSpec::new(seed, STREAM_NOISE + k)))
        .collect::<Result<_, _>>()?;
    let format: MatrixFormat = g.format.into();
    let mut dir = OutputDir::create(&g.out_dir)?;
    for (k, s) in samples.iter().enumerate() {
        let name = format!("noise_{k:04}.{}", format.extension());
        write_matrix(&dir.path(&name), s, format)?;
        dir.record(&name);
    }
    dir.finish("noise", canonical, vec![seed])?;
    Ok(())
}

pub fn bayes(g: &GlobalOpts, path: &Path) -> Result<(), CliError> {
    let (cfg, canonical): (BayesConfig, Value) = config::load(path)?;
    cfg.channel.validate()?;
    let grid = cfg.grid.points()?;
    // A provisional τ locates the error-minimizing one when none is given.
    let profile = match cfg.tau {
        Some(tau) => surrogate_error_profile(&cfg.channel, tau, &grid)?,
        None => {
            let probe = surrogate_error_profile(&cfg.channel, 1.0, &grid)?;
            surrogate_error_profile(&cfg.channel, probe.best_tau, &grid)?
        }
    };
    let collapse = posterior_collapse_check(&cfg.channel, &grid)?;

    let mut table = specclip::io::CsvTable::new(&["y", "pi", "bayes_mean", "surrogate", "abs_err"]);
    for r in &profile.rows {
        table.push(vec![r.y.into(), r.retention_pi.into(), r.bayes.into(), r.surrogate.into(), r.abs_err.into()]);
    }
    let mut ctable = specclip::io::CsvTable::new(&["y", "heavy_mean", "bound", "quad_error", "violated"]);
    for r in &collapse {
        ctable.push(vec![r.y.into(), r.heavy_mean.into(), r.bound.into(), r.quad_error.into(), r.violated.into()]);
    }
    let summary = json!({
        "beta": cfg.channel.beta(),
        "tau": profile.tau,
        "max_abs_err": profile.max_abs_err,
        "best_tau": profile.best_tau,
        "best_max_abs_err": profile.best_max_abs_err,
        "collapse_violations": collapse.iter().filter(|r| r.violated).count(),
        "grid_points": grid.len(),
    });
    let mut dir = OutputDir::create(&g.out_dir)?;
    dir.write("bayes.csv", table.to_csv().as_bytes())?;
    dir.write("collapse.csv", ctable.to_csv().as_bytes())?;
    dir.write_json("summary.json", &summary)?;
    dir.finish("bayes", canonical, vec![])?;
    print_json(&summary);
    Ok(())
}

pub fn verify(g: &GlobalOpts, path: Option<&Path>) -> Result<(), CliError> {
    let (mut cfg, mut canonical): (VerifyConfig, Value) = match path {
        Some(p) => config::load(p)?,
        None => {
            let cfg = VerifyConfig::default();
            let canonical = serde_json::to_value(&cfg).map_err(|e| CliError::config(e.to_string()))?;
            (cfg, canonical)
        }
    };
    cfg.seed = seed_of(g, cfg.seed);
    override_seed(&mut canonical, cfg.seed);
    cfg.validate()?;
    let report = run_lemma_suite(&cfg)?;
    let mut dir = OutputDir::create(&g.out_dir)?;
    dir.write_json("verify.json", &report)?;
    dir.finish("verify", canonical, vec![cfg.seed])?;
    for c in report.failures() {
        eprintln!("FAIL {}/{}: measured {} > bound {}", c.group, c.name, c.measured, c.bound);
    }
    println!("{} checks, {} passed, {} failed", report.total, report.total - report.failed, report.failed);
    if report.failed > 0 {
        return Err(CliError {
            code: EXIT_VERIFY_FAILED,
            message: format!("{} lemma checks failed", report.failed),
        });
    }
    Ok(())
}

pub fn plan(g: &GlobalOpts, path: &Path) -> Result<(), CliError> {
    let (cfg, canonical): (PlanConfig, Value) = config::load(path)?;
    cfg.constants.validate()?;
    let plans: Vec<TheoremPlan> = ThresholdKind::ALL
        .iter()
        .map(|&k| theorem_plan(k, &cfg.constants, cfg.epsilon, cfg.multiplier))
        .collect::<Result<_, _>>()?;
    let mut dir = OutputDir::create(&g.out_dir)?;
    dir.write_json("plan.json", &plans)?;
    dir.finish("plan", canonical, vec![])?;
    print_json(&serde_json::to_value(&plans).expect("plans serialize"));
    Ok(())
}

pub fn bench(g: &GlobalOpts, a: &BenchArgs) -> Result<(), CliError> {
    let (mut cfg, mut canonical): (SweepConfig, Value) = config::load(&a.config)?;
    if let Some(seed) = g.seed {
        cfg.seeds = vec![seed];
        canonical["seeds"] = json!([seed]);
    }
    cfg.keep_curves = a.emit_plot_data;
    canonical["keep_curves"] = json!(a.emit_plot_data);
    cfg.validate()?;
    let result = grid_sweep(&cfg)?;
    let mut dir = OutputDir::create(&g.out_dir)?;
    dir.write("results.csv", result.results_table().to_csv().as_bytes())?;
    dir.write("best.csv", result.best_table().to_csv().as_bytes())?;
    dir.write("timings.csv", result.timings_table().to_csv().as_bytes())?;
    if a.emit_plot_data {
        dir.write("curves.csv", result.curves_table().to_csv().as_bytes())?;
    }
    dir.finish("bench", canonical, cfg.seeds.clone())?;
    println!("{} runs over {} cells; results in {}", result.rows.len(), result.cells.len(), g.out_dir.display());
    Ok(())
}
