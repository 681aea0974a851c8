//! `rvlab`: batch runner for the renormalized-area experiments.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 a tolerance or
//! acceptance check failed (or the computation itself broke down).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Failure, Outcome};
use config::{Experiment, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "rvlab",
    version,
    about = "Renormalized-area laboratory: finite parts, minimal surfaces and coefficient recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML (or `.json`) experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Factor applied to every tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Renormalized area of the hemisphere and the finite-part primitive table.
    Riesz,
    /// Renormalized areas over ellipses and perturbed circles against the −2π ceiling.
    Rigidity,
    /// Exact constants with nonvanishing certificates.
    Constants,
    /// Recover the boundary expansion of a planted metric jet.
    Recover,
    /// Quick invariant suite over all modules.
    Selftest,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::Riesz => Experiment::RieszDemo,
            Command::Rigidity => Experiment::Rigidity,
            Command::Constants => Experiment::ConstantsTable,
            Command::Recover => Experiment::Recover,
            Command::Selftest => Experiment::Selftest,
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(Failure::Config)?,
        None => ExperimentConfig::default(),
    };
    let kind = cli.command.experiment();
    if let Some(declared) = cfg.experiment {
        if declared != kind {
            return Err(Failure::Config(format!(
                "configuration is for {declared:?}, not {kind:?}"
            )));
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if !(cli.tol_scale > 0.0 && cli.tol_scale.is_finite()) {
        return Err(Failure::Config(format!(
            "--tol-scale must be positive, got {}",
            cli.tol_scale
        )));
    }
    cfg.validate().map_err(Failure::Config)?;
    let tol = cfg.tolerances.scaled(cli.tol_scale);
    let out = cfg.out.clone();
    match cli.command {
        Command::Riesz => commands::riesz(&cfg, &tol, &out),
        Command::Rigidity => commands::rigidity(&cfg, &tol, &out),
        Command::Constants => commands::constants(&cfg, &out),
        Command::Recover => commands::recover(&cfg, &tol, &out),
        Command::Selftest => commands::selftest(&cfg, &tol, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            let dir = cli.out.clone().unwrap_or_default();
            for f in &outcome.files {
                eprintln!("wrote {}", dir.join(f).display());
            }
            println!(
                "{}",
                serde_json::to_string(&outcome.summary["passed"]).unwrap_or_default()
            );
            if outcome.passed {
                println!("PASS");
                ExitCode::SUCCESS
            } else {
                println!("FAIL");
                ExitCode::from(2)
            }
        }
        Err(Failure::Config(msg)) => {
            eprintln!("rvlab: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Computation(msg)) => {
            eprintln!("rvlab: {msg}");
            ExitCode::from(2)
        }
    }
}
