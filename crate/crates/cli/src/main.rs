//! `sticky-mfg`: solve, simulate and audit the sticky-price mean-field game.

mod checks;
mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{GridTarget, Overrides, RunConfig};
use crate::error::CliError;
use crate::output::RunOutput;

const THREADS_ENV: &str = "STICKY_MFG_THREADS";

#[derive(Parser)]
#[command(
    name = "sticky-mfg",
    version,
    about = "Mean-field equilibrium and epsilon-Nash checks for sticky-price markets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON, schema version 1).
    #[arg(long)]
    config: PathBuf,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Override the time step of the subcommand's grid.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the horizon of the subcommand's grid.
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the config and run every validation.
    Validate(Common),
    /// Closed-form equilibrium, characteristic data and residual checks.
    Equilibrium(Common),
    /// Simulate the finite market under the decentralized strategies.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Mean-field convergence table over `population.n_list` instead of trajectories.
        #[arg(long)]
        convergence: bool,
    },
    /// Monte Carlo rewards of every firm plus the representative-firm check.
    Reward(Common),
    /// Best-response gaps over `population.n_list`.
    Gap(Common),
    /// Picard iteration of the consistency operator against the closed form.
    Fixedpoint(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common, GridTarget) {
        match self {
            Command::Validate(c) => ("validate", c, GridTarget::Sim),
            Command::Equilibrium(c) => ("equilibrium", c, GridTarget::Equilibrium),
            Command::Simulate { common, convergence: false } => ("simulate", common, GridTarget::Sim),
            Command::Simulate { common, convergence: true } => ("convergence", common, GridTarget::Sim),
            Command::Reward(c) => ("reward", c, GridTarget::Sim),
            Command::Gap(c) => ("gap", c, GridTarget::Sim),
            Command::Fixedpoint(c) => ("fixedpoint", c, GridTarget::FixedPoint),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Parse(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Io(format!("cannot start thread pool: {e}")))
}

fn run(command: &Command) -> Result<(), CliError> {
    let (name, common, target) = command.parts();
    let mut cfg = RunConfig::load(&common.config)?;
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        paths: common.paths,
        dt: common.dt,
        horizon: common.horizon,
    };
    cfg.apply(&overrides, target);

    let findings = checks::check(&cfg);
    for w in &findings.warnings {
        eprintln!("warning: {w}");
    }
    if !findings.errors.is_empty() {
        return Err(CliError::Validation(findings.errors));
    }
    if name == "validate" {
        println!("OK");
        return Ok(());
    }

    let mut out = RunOutput::create(cfg.output_dir.clone(), cfg.hash())?;
    log::info!("{name}: config hash {}", out.hash());
    let result = match name {
        "equilibrium" => commands::equilibrium(&cfg, &mut out),
        "simulate" => commands::simulate(&cfg, &mut out),
        "convergence" => commands::convergence(&cfg, &mut out),
        "reward" => commands::reward(&cfg, &mut out),
        "gap" => commands::gap(&cfg, &mut out),
        "fixedpoint" => commands::fixedpoint(&cfg, &mut out),
        _ => unreachable!("every subcommand is dispatched"),
    };
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => e.to_string(),
    };
    out.finish(name, cfg.seed, &status)?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(&cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
