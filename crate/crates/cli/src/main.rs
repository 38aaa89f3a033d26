//! `ihdr`: batch front end for simulation, training, reconstruction,
//! evaluation and gradient checking.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numerical
//! failure. Failures print a single `error[<kind>]: <reason>` line to stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "ihdr", version, about = "Intrinsic-domain single-image HDR reconstruction toolkit")]
struct Cli {
    /// Flat TOML file supplying values for any option; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes, their LDR captures and a JSONL manifest.
    Simulate(SimulateArgs),
    /// Train one stage network on a simulated dataset.
    Train(TrainArgs),
    /// Run the three-stage pipeline on an LDR image.
    Reconstruct(ReconstructArgs),
    /// Score HDR predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Compare analytic and finite-difference gradients of every op and loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of scenes.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub first_seed: Option<u64>,
    /// Square scene size in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Exposure range in stops, as `LO,HI`.
    #[arg(long, value_name = "LO,HI", allow_hyphen_values = true, value_parser = parse_range)]
    pub t_range: Option<[f64; 2]>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub bits: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// shading, albedo or refinement.
    #[arg(long)]
    pub role: Option<String>,
    /// Directory written by `simulate`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint; the loss curve goes next to it as `.loss.csv`.
    #[arg(long, value_name = "FILE")]
    pub ckpt: Option<PathBuf>,
    /// Directory with `shading.ckpt` and `albedo.ckpt` (refinement only).
    #[arg(long, value_name = "DIR")]
    pub ckpts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// LDR input: 8-bit PNG (linearized with `--gamma`) or linear PFM.
    #[arg(long, value_name = "FILE")]
    pub ldr: Option<PathBuf>,
    /// Directory with `shading.ckpt`, `albedo.ckpt` and `refinement.ckpt`.
    #[arg(long, value_name = "DIR")]
    pub ckpts: Option<PathBuf>,
    /// Output prefix; writes `_dh`, `_ah`, `_ihat` and `_hdr` PFM files.
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// LDR inverse shading (PFM). Without it and `--albedo`, a luminance
    /// decomposition is used.
    #[arg(long, value_name = "FILE")]
    pub inv_shading: Option<PathBuf>,
    /// LDR albedo (PFM).
    #[arg(long, value_name = "FILE")]
    pub albedo: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction file, or directory paired with `--gt` by file name.
    #[arg(long, value_name = "PATH")]
    pub pred: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub gt: Option<PathBuf>,
    /// JSON report path; a CSV with the same stem is written beside it.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok([parse(lo)?, parse(hi)?])
}

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Data(m) => ("data", m),
            Failure::Numerical(m) => ("numerical", m),
        };
        format!("error[{kind}]: {}", msg.replace('\n', " "))
    }
}

impl From<ihdr_core::Error> for Failure {
    fn from(e: ihdr_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Reconstruct(a) => commands::reconstruct(a, &cfg),
        Command::Evaluate(a) => commands::evaluate(a, &cfg),
        Command::Gradcheck(a) => commands::gradcheck(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let reason = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", reason.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code())
        }
    }
}
