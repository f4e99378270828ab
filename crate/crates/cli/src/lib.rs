//! Command-line harness: every pipeline of the `meanfield` crate behind one subcommand each.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod repro;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::{ExperimentConfig, Overrides};
use crate::error::{CliError, CliResult};
use crate::output::{resolve_dir, Output};

#[derive(Debug, Parser)]
#[command(name = "meanfield", version, about = "Mean-field spiking neuron experiments")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Size of the worker pool.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Exact simulation of the finite network.
    Simulate,
    /// Linear jump rate under the configured current.
    Rate,
    /// Nonlinear jump rate by fixed-point iteration.
    Picard,
    /// Invariant measure and stationary rate at the configured current.
    Invariant,
    /// All steady states for the configured coupling.
    SteadyStates,
    /// Zeros of the transform and the exponential convergence rate.
    Spectral,
    /// Finite-volume solution of the density equation.
    FokkerPlanck,
    /// Empirical rate of the network against the mean-field rate.
    ChaosCheck,
    /// Canned experiment with pinned config and tolerances.
    Repro {
        #[arg(value_parser = repro::NAMES)]
        name: String,
    },
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Command::Simulate => "simulate".into(),
            Command::Rate => "rate".into(),
            Command::Picard => "picard".into(),
            Command::Invariant => "invariant".into(),
            Command::SteadyStates => "steady-states".into(),
            Command::Spectral => "spectral".into(),
            Command::FokkerPlanck => "fokker-planck".into(),
            Command::ChaosCheck => "chaos-check".into(),
            Command::Repro { name } => format!("repro-{name}"),
        }
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let command = cli.command.name();
    match execute(&cli) {
        Ok((line, code)) => {
            println!("{line}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", json!({ "schema": output::SCHEMA, "command": command, "status": "error", "kind": e.kind(), "error": e.to_string() }));
            e.exit_code()
        }
    }
}

/// Effective configuration: pinned or file config, then flags.
pub fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => read_config(path)?,
        (None, Command::Repro { name }) => repro::pinned(name)?,
        (None, _) => ExperimentConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}

fn execute(cli: &Cli) -> CliResult<(String, i32)> {
    let cfg = load_config(cli)?;
    let workers = cli.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
    pool.install(|| dispatch(cli, &cfg))
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig) -> CliResult<(String, i32)> {
    let command = cli.command.name();
    let dir = resolve_dir(cli.out.as_deref(), &command);
    let mut out = Output::create(&dir, &command, cfg)?;
    let (status, results) = match &cli.command {
        Command::Simulate => commands::simulate(cfg, &mut out)?,
        Command::Rate => commands::rate(cfg, &mut out)?,
        Command::Picard => commands::picard(cfg, &mut out)?,
        Command::Invariant => commands::invariant(cfg, &mut out)?,
        Command::SteadyStates => commands::steady(cfg, &mut out)?,
        Command::Spectral => commands::spectral(cfg, &mut out)?,
        Command::FokkerPlanck => commands::fokker_planck(cfg, &mut out)?,
        Command::ChaosCheck => commands::chaos_check(cfg, &mut out)?,
        Command::Repro { name } => {
            let run = repro::run(name, cfg)?;
            for (file, rate) in &run.series {
                out.csv(file, |w| Ok(rate.write_csv(w)?))?;
            }
            let rep = run.report;
            let text = serde_json::to_string_pretty(&json!({ "schema": output::SCHEMA, "config_hash": out.hash, "report": rep }))
                .map_err(std::io::Error::other)?;
            std::fs::write(dir.join("repro.json"), text + "\n")?;
            let status = if rep.passed { "pass" } else { "fail" };
            let failed = rep.failures();
            let mut results = serde_json::to_value(&rep).map_err(std::io::Error::other)?;
            if !failed.is_empty() {
                results["failed"] = json!(failed);
            }
            let line = out.finish(status, results)?;
            return Ok((line, if rep.passed { 0 } else { 2 }));
        }
    };
    Ok((out.finish(status, results)?, 0))
}
