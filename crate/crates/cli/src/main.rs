//! `pseudoradar`: synthetic corpora, L2R sampling, Chamfer evaluation and
//! contrastive-loss checks from the command line.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or I/O error.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pseudoradar::l2r::WeightAblation;
use pseudoradar::pointcloud::FrameFormat;

/// A check ran to completion and did not pass (exit 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

#[derive(Parser)]
#[command(name = "pseudoradar", version, about = "Pseudo-radar synthesis, evaluation and contrastive-loss checks")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// Binary little-endian records.
    Pcf,
    Csv,
}

impl From<Format> for FrameFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Pcf => FrameFormat::Native,
            Format::Csv => FrameFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    None,
    Int,
    Dist,
    Spa,
}

impl From<Ablation> for WeightAblation {
    fn from(a: Ablation) -> Self {
        match a {
            Ablation::None => WeightAblation::None,
            Ablation::Int => WeightAblation::Int,
            Ablation::Dist => WeightAblation::Dist,
            Ablation::Spa => WeightAblation::Spa,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic LiDAR/radar corpus with its manifest.
    SynthGen {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// Moving boxes in the scene.
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pcf")]
        format: Format,
    },
    /// Fit a 1-D Gaussian mixture to per-frame radar point counts.
    FitGmm {
        /// One positive integer per line.
        #[arg(long)]
        counts: PathBuf,
        #[arg(long, default_value_t = pseudoradar::gmm::DEFAULT_COMPONENTS)]
        components: usize,
        #[arg(long)]
        out: PathBuf,
        /// Fit report; defaults to `<out stem>.fit.json` beside the model.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = pseudoradar::gmm::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = pseudoradar::gmm::DEFAULT_MAX_ITER)]
        max_iter: usize,
    },
    /// Run L2R sampling over a LiDAR sequence.
    Sample {
        /// Corpus directory (its `lidar/` is used) or a frame directory.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        gmm: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablate_weights: Option<Ablation>,
        #[arg(long, value_enum, default_value = "pcf")]
        format: Format,
    },
    /// Mean Chamfer distance between two frame directories.
    Chamfer {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// SVG scatter of per-frame values.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Finite-difference check of every loss component.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Bias the analytic gradient of one component (harness self-test).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Gradient descent on the corpus's planted-correspondence feature batch.
    PretrainToy {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: PathBuf,
        /// Keep the feature maps fixed and train only the attention parameters.
        #[arg(long)]
        freeze_maps: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = config::RunConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::SynthGen { seed, frames, objects, out, format } => {
            commands::synth_gen(&mut cfg, seed, frames, objects, out, format.into())
        }
        Command::FitGmm { counts, components, out, report, seed, tol, max_iter } => {
            commands::fit_gmm(&mut cfg, &counts, components, &out, report, seed, tol, max_iter)
        }
        Command::Sample { input, gmm, seed, out, ablate_weights, format } => {
            cfg.input = input.or(cfg.input);
            cfg.gmm = gmm.or(cfg.gmm);
            cfg.out = out.or(cfg.out);
            cfg.seed = seed.unwrap_or(cfg.seed);
            if let Some(a) = ablate_weights {
                cfg.ablate_weights = a.into();
            }
            commands::sample(&cfg, format.into())
        }
        Command::Chamfer { a, b, report, plot } => commands::chamfer(&cfg, &a, &b, &report, plot.as_deref()),
        Command::Gradcheck { seed, report, corrupt } => {
            cfg.seed = seed.unwrap_or(cfg.seed);
            commands::gradcheck(&cfg, report.as_deref(), corrupt.as_deref())
        }
        Command::PretrainToy { corpus, steps, lr, seed, report, freeze_maps } => {
            cfg.corpus = corpus.or(cfg.corpus);
            cfg.seed = seed.unwrap_or(cfg.seed);
            commands::pretrain_toy(&cfg, steps, lr, &report, !freeze_maps)
        }
    }
}

fn main() -> ExitCode {
    // clap exits 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<CheckFailed>() => {
            eprintln!("check failed: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
