//! `mvpa`: detect bouts, check exchangeability, fit the two-part model,
//! diagnose and assess the fit, and estimate usual MVPA and guideline
//! compliance.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure.

mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvpa_core::mcmc::{CountFamily, PriorPreset};

use config::Config;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mvpa", version, about = "Usual daily MVPA from minute-level wearable data")]
struct Cli {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic covariates, days and (optionally) minute traces.
    Simulate(SimulateArgs),
    /// Find bouts in a minutes file and write bouts.csv and days.csv.
    Detect(DetectArgs),
    /// Day-exchangeability checks: Bowker, weekend t-test, day-effect regression.
    Preflight(PreflightArgs),
    /// Fit the model by MCMC, with checkpointing.
    Fit(FitArgs),
    /// Convergence report for a fit.
    Diagnose(DiagnoseArgs),
    /// Posterior predictive checks.
    Assess(AssessArgs),
    /// Usual MVPA distribution and guideline compliance.
    Usual(UsualArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub persons: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    /// gp or nb.
    #[arg(long)]
    pub family: Option<CountFamily>,
    /// Count dispersion of the generating truth (λ for gp, κ for nb).
    #[arg(long)]
    pub dispersion: Option<f64>,
    /// Also write minutes.csv.
    #[arg(long)]
    pub minutes: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub minutes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreflightArgs {
    #[arg(long)]
    pub days: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub days: PathBuf,
    #[arg(long)]
    pub covariates: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub burnin: Option<u64>,
    #[arg(long)]
    pub thin: Option<u64>,
    /// gp or nb.
    #[arg(long)]
    pub family: Option<CountFamily>,
    /// paper, set2, set3 or set4.
    #[arg(long)]
    pub prior: Option<PriorPreset>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue from <out>/checkpoint.json.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this iteration is checkpointed (continue later with --resume).
    #[arg(long)]
    pub stop_after: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Defaults to the fit directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with status 3 when a parameter fails R̂ or MCSE.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Defaults to the seed of the fit.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also fit the negative-binomial model and compare.
    #[arg(long)]
    pub compare_nb: bool,
}

#[derive(Debug, Args)]
pub struct UsualArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Target population covariates (defaults to the fitted sample).
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Compliance threshold in MET-minutes per day.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// `[name=]expression`, e.g. `bmi < 25 && female`; repeatable. Defaults to
    /// the nine standard rows.
    #[arg(long)]
    pub population: Vec<String>,
    /// CSV `person_id,weight`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Density grid `MAX:STEP` or `START:END:STEP`.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(cmd) = &cli.command {
        stages::apply_overrides(cmd, &mut cfg)?;
    }
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    cfg.validate()?;
    let Some(cmd) = cli.command else {
        return Err(CliError::Usage("no subcommand given (try --help)".into()));
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cmd {
        Command::Simulate(a) => stages::simulate(&a, &cfg),
        Command::Detect(a) => stages::detect(&a, &cfg),
        Command::Preflight(a) => stages::preflight(&a, &cfg),
        Command::Fit(a) => stages::fit(&a, &cfg),
        Command::Diagnose(a) => stages::diagnose(&a, &cfg),
        Command::Assess(a) => stages::assess(&a, &cfg),
        Command::Usual(a) => stages::usual(&a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
