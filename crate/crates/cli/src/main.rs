mod commands;
mod config;
mod error;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use specclip::clip::ClipKind;
use specclip::io::MatrixFormat;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "specclip", version, about = "Entry-wise clipping operators, localization diagnostics and clipped-optimizer tooling")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Overrides the seed of the config (for `bench`: runs that single seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving the artifacts and manifest.json.
    #[arg(long, global = true, default_value = "specclip-out")]
    pub out_dir: PathBuf,
    /// Worker threads for `bench` (0 = all cores); other commands run on one thread.
    #[arg(long, global = true, env = "SPECCLIP_THREADS")]
    pub threads: Option<usize>,
    /// Matrix output format.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Bin,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => MatrixFormat::Csv,
            FormatArg::Bin => MatrixFormat::Bin,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    None,
    Hard,
    Global,
    Spectral,
    Smooth,
}

impl From<KindArg> for ClipKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::None => ClipKind::None,
            KindArg::Hard => ClipKind::HardCoordinate,
            KindArg::Global => ClipKind::Global,
            KindArg::Spectral => ClipKind::Spectral,
            KindArg::Smooth => ClipKind::SmoothShrinkage,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ClipArgs {
    /// Input matrix (canonical CSV or SPCMAT01).
    pub input: PathBuf,
    /// Output path for the clipped matrix.
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Absolute threshold (τ, c, or the Frobenius/spectral bound).
    #[arg(long, conflicts_with = "quantile", required_unless_present_any = ["quantile"])]
    pub threshold: Option<f64>,
    /// Threshold as the q-quantile of the |entries|.
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Wiener gain of smooth shrinkage.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    pub config: PathBuf,
    /// Also write per-run loss curves (curves.csv).
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply a clipping operator to a matrix file.
    Clip(ClipArgs),
    /// Localization report of a noise matrix against a signal.
    Diagnose { config: PathBuf },
    /// Sample noise matrices.
    Noise { config: PathBuf },
    /// Bayes posterior mean against the smooth-shrinkage surrogate.
    Bayes { config: PathBuf },
    /// Run the scalar lemma suite; exits 1 if any check fails.
    Verify {
        /// Lemma-suite config; the built-in defaults when omitted.
        config: Option<PathBuf>,
    },
    /// Theorem thresholds, step sizes and horizons for a target accuracy.
    Plan { config: PathBuf },
    /// Regression benchmark sweep.
    Bench(BenchArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match cli.command {
        Command::Bench(_) => cli.global.threads.unwrap_or(0),
        _ => 1,
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("specclip: thread pool: {e}");
        return ExitCode::from(error::EXIT_CONFIG);
    }
    let g = &cli.global;
    let result = match &cli.command {
        Command::Clip(a) => commands::clip(g, a),
        Command::Diagnose { config } => commands::diagnose(g, config),
        Command::Noise { config } => commands::noise(g, config),
        Command::Bayes { config } => commands::bayes(g, config),
        Command::Verify { config } => commands::verify(g, config.as_deref()),
        Command::Plan { config } => commands::plan(g, config),
        Command::Bench(a) => commands::bench(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("specclip: {e}");
            ExitCode::from(e.code)
        }
    }
}
