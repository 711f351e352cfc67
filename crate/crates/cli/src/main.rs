//! `chmm`: simulation, fitting, decoding and uncertainty experiments for
//! copula hidden Markov models.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use chmm_core::CopulaFamily;

#[derive(Debug, Parser)]
#[command(name = "chmm", version, about = "Copula hidden Markov model experiments")]
struct Cli {
    /// Worker threads for replicate loops; CHMM_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate labelled trajectories from a model.
    Simulate(SimulateArgs),
    /// Fit a model by EIFM.
    Fit(FitArgs),
    /// Locally decode trajectories and report posteriors.
    Decode(DecodeArgs),
    /// Monte Carlo zero-one loss against the closed form over a θ grid.
    LossCurve(LossCurveArgs),
    /// Parametric bootstrap covariance and percentile intervals.
    Bootstrap(BootstrapArgs),
    /// Godambe sandwich covariance and Wald intervals.
    Godambe(GodambeArgs),
    /// Copula family selection by the Cramér–von Mises statistic.
    Gof(GofArgs),
    /// Local convergence diagnostic at a fitted model.
    Diagnose(DiagnoseArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Decode(_) => "decode",
            Command::LossCurve(_) => "loss-curve",
            Command::Bootstrap(_) => "bootstrap",
            Command::Godambe(_) => "godambe",
            Command::Gof(_) => "gof",
            Command::Diagnose(_) => "diagnose",
        }
    }

    fn seed_mut(&mut self) -> &mut Option<u64> {
        match self {
            Command::Simulate(a) => &mut a.common.seed,
            Command::Fit(a) => &mut a.common.seed,
            Command::Decode(a) => &mut a.common.seed,
            Command::LossCurve(a) => &mut a.common.seed,
            Command::Bootstrap(a) => &mut a.common.seed,
            Command::Godambe(a) => &mut a.common.seed,
            Command::Gof(a) => &mut a.common.seed,
            Command::Diagnose(a) => &mut a.common.seed,
        }
    }

    pub fn out_dir(&self) -> &PathBuf {
        match self {
            Command::Simulate(a) => &a.common.out,
            Command::Fit(a) => &a.common.out,
            Command::Decode(a) => &a.common.out,
            Command::LossCurve(a) => &a.common.out,
            Command::Bootstrap(a) => &a.common.out,
            Command::Godambe(a) => &a.common.out,
            Command::Gof(a) => &a.common.out,
            Command::Diagnose(a) => &a.common.out,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CommonArgs {
    /// Output directory; created if missing.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Master seed below 2^63; generated and recorded in the manifest when omitted.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct ModelSource {
    /// Model file (TOML).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Built-in three-state Frank scenario 1-4.
    #[arg(long)]
    pub scenario: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitOverrides {
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Relative log-likelihood change treated as convergence.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Also require every parameter to move less than this.
    #[arg(long)]
    pub param_tolerance: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Trajectory length T.
    #[arg(long, short = 'T')]
    pub length: usize,
    /// Number of trajectories.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Trajectory CSV; repeat for several trajectories.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Starting model; the two-stage heuristic is used when omitted.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Number of states for the heuristic start.
    #[arg(long, short = 'K', default_value_t = 2)]
    pub states: usize,
    /// Copula family of every state for the heuristic start.
    #[arg(long, default_value = "frank")]
    pub family: CopulaFamily,
    /// Margin family per dimension (one value applies to all).
    #[arg(long, value_delimiter = ',', default_value = "gaussian")]
    pub margins: Vec<chmm_core::MarginFamily>,
    /// Stage-one restarts of the heuristic start.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[command(flatten)]
    pub fit: FitOverrides,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct LossCurveArgs {
    /// Family of the symmetric two-state mixture (frank, gauss or fgm).
    #[arg(long, default_value = "frank")]
    pub family: CopulaFamily,
    /// θ grid as `start:stop:step` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "1:96:5")]
    pub thetas: String,
    #[arg(long, short = 'T', default_value_t = 100)]
    pub length: usize,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long, short = 'T')]
    pub length: usize,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[command(flatten)]
    pub fit: FitOverrides,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GodambeArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long, short = 'T')]
    pub length: usize,
    #[arg(long, default_value_t = 500)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GofArgs {
    /// Bivariate trajectory CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to rows labelled with this 1-based state.
    #[arg(long)]
    pub state: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "frank,clayton,gumbel,joe,gauss")]
    pub families: Vec<CopulaFamily>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Use only the first N observations; the Jacobian grows quadratically in T.
    #[arg(long)]
    pub truncate: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug)]
pub enum CliError {
    Core(chmm_core::Error),
    Usage(String),
    Missing(PathBuf),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Usage(m) => f.write_str(m),
            CliError::Missing(p) => write!(f, "input file {} does not exist", p.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<chmm_core::Error> for CliError {
    fn from(e: chmm_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Usage(_) => "usage",
            CliError::Missing(_) => "io",
        }
    }

    fn exit_code(&self) -> u8 {
        match self.category() {
            "usage" | "validation" => 2,
            "io" => 3,
            _ => 4,
        }
    }
}

fn report(err: &CliError, command: Option<&str>) -> ExitCode {
    let line = serde_json::json!({
        "error": { "category": err.category(), "command": command, "message": err.to_string() }
    });
    eprintln!("{line}");
    ExitCode::from(err.exit_code())
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("CHMM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("CHMM_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => match flag {
            Some(0) => Err(CliError::Usage("--threads must be positive".into())),
            other => Ok(other),
        },
    }
}

fn fresh_seed() -> u64 {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
    // splitmix64 finalizer
    let mut z = nanos ^ (u64::from(std::process::id()) << 32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    // manifest integers are signed 64-bit
    (z ^ (z >> 31)) >> 1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&CliError::Usage(e.to_string().trim_end().to_string()), None),
    };
    let mut command = cli.command;
    let name = command.name();
    match thread_count(cli.threads) {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                return report(&CliError::Usage(e.to_string()), Some(name));
            }
        }
        Ok(None) => {}
        Err(e) => return report(&e, Some(name)),
    }
    let seed = *command.seed_mut().get_or_insert_with(fresh_seed);
    match commands::run(&command, seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e, Some(name)),
    }
}
