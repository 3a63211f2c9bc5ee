//! `scalar-thermo`: run classical and quantum relaxation scenarios and write
//! the results as CSV or JSON tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CommandError;
use config::ScenarioConfig;
use output::{Format, ResultBundle};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "scalar-thermo",
    version,
    about = "Thermodynamics of a Brownian-thermostatted lattice scalar field"
)]
struct Cli {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Langevin ensemble with heat, work and moment checks.
    ClassicalRun,
    /// Truncated-Fock master equation for the configured modes.
    QuantumRun,
    /// CPTP verdict over a coupling and temperature grid.
    CptpScan,
    /// Quantum against classical relaxation as ħ decreases.
    ClassicalLimit,
    /// Built-in invariant checks; no config needed.
    Check,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ClassicalRun => "classical-run",
            Command::QuantumRun => "quantum-run",
            Command::CptpScan => "cptp-scan",
            Command::ClassicalLimit => "classical-limit",
            Command::Check => "check",
        }
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(EXIT_USAGE, "--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            return fail(EXIT_USAGE, e);
        }
    }
    let cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => match ScenarioConfig::load(path) {
            Ok(mut c) => {
                if let Some(s) = cli.seed {
                    c.run.seed = s;
                }
                Some(c)
            }
            Err(e) => return fail(EXIT_USAGE, e),
        },
        (None, Command::Check) => None,
        (None, cmd) => return fail(EXIT_USAGE, format!("{} needs --config", cmd.name())),
    };
    let result: Result<ResultBundle, CommandError> = match (&cli.command, &cfg) {
        (Command::Check, _) => commands::check_suite(),
        (Command::ClassicalRun, Some(c)) => commands::classical_run(c),
        (Command::QuantumRun, Some(c)) => commands::quantum_run(c),
        (Command::CptpScan, Some(c)) => commands::cptp_scan_cmd(c),
        (Command::ClassicalLimit, Some(c)) => commands::classical_limit_cmd(c),
        (_, None) => unreachable!("config presence checked above"),
    };
    let bundle = match result {
        Ok(b) => b,
        Err(e @ CommandError::Config(_)) => return fail(EXIT_USAGE, e),
        Err(e @ CommandError::Numerical(_)) => return fail(EXIT_NUMERICAL, e),
    };
    let seed = cfg.as_ref().map(|c| c.run.seed);
    if let Err(e) = bundle.write(&cli.out, cli.format, cli.command.name(), seed, cfg.as_ref()) {
        return fail(EXIT_USAGE, e);
    }
    bundle.print_summary();
    if bundle.all_checks_pass() {
        ExitCode::SUCCESS
    } else {
        fail(EXIT_CHECK, "one or more checks failed")
    }
}
