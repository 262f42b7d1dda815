//! `chr2sim`: tables, exact and simulated error rates, and parameter sweeps
//! for ChR2 receivers.
//!
//! Exit status is 0 on success, 1 when the configuration or a model invariant
//! is invalid, and 2 on any other failure. Failures print one line to stderr:
//!
//! ```text
//! error: kind=validation key=dt message=euler bound violated: ...
//! ```

mod checks;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use chr2_core::analysis::{exact_error_probability, sweep, sweep_csv, SweepOptions, SweepPoint};
use chr2_core::config::{load_config, parse_config, ConfigError, ConfigGrid};
use chr2_core::detector::{posterior_table, table_csv};
use chr2_core::report::fmt_num;
use chr2_core::Error;

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "chr2sim", version, about = "ChR2 optical receiver simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment file (`key = value` lines); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials per point, overrides the config
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Write the result here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; affects speed only
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write a JSON run manifest with timing
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// State sequences of one bit with their a-posteriori probabilities
    Table,
    /// Exact error probability (a bare number for a single config)
    PeTheory,
    /// Monte Carlo error rate for every config
    Simulate,
    /// Exact and simulated error rate for every grid point
    Sweep,
    /// Check the config and model invariants
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Table => "table",
            Command::PeTheory => "pe-theory",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Validate => "validate",
        }
    }
}

struct Failure {
    kind: &'static str,
    key: Option<String>,
    message: String,
    code: u8,
}

impl Failure {
    fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: "runtime",
            key: None,
            message: message.into(),
            code: 2,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let (kind, code, message) = match &e {
            ConfigError::Parse { line, message, .. } => ("parse", 1, format!("line {line}: {message}")),
            ConfigError::Validation { message, .. } => ("validation", 1, message.clone()),
            ConfigError::Io { .. } => ("io", 2, e.to_string()),
        };
        Self {
            kind,
            key: e.key().map(str::to_string),
            message,
            code,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let validation = matches!(
            e,
            Error::NegativeIntensity(_)
                | Error::NegativeRate { .. }
                | Error::NonPositiveStep(_)
                | Error::InvalidStep { .. }
                | Error::InvalidSingle(_)
                | Error::InvalidDistribution(_)
                | Error::InvalidObservation(_)
                | Error::InvalidParameter { .. }
        );
        let key = match &e {
            Error::InvalidParameter { key, .. } => Some(key.clone()),
            Error::InvalidStep { .. } | Error::NonPositiveStep(_) => Some("dt".into()),
            _ => None,
        };
        Self {
            kind: if validation { "validation" } else { "runtime" },
            key,
            message: e.to_string(),
            code: if validation { 1 } else { 2 },
        }
    }
}

fn load(cli: &Cli) -> Result<ConfigGrid, Failure> {
    let mut grid = match &cli.config {
        Some(path) => load_config(path)?,
        None => parse_config("")?,
    };
    grid.override_run(cli.seed, cli.trials)?;
    Ok(grid)
}

fn single(grid: &ConfigGrid, command: Command) -> Result<&SweepPoint, Failure> {
    if grid.is_single() {
        Ok(&grid.points[0])
    } else {
        Err(Failure {
            kind: "validation",
            key: grid.swept_keys.first().cloned(),
            message: format!("`{}` needs a single config, got a grid of {}", command.name(), grid.points.len()),
            code: 1,
        })
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Produces the output text and whether the run succeeded (`validate` can
/// finish its report and still fail).
fn execute(cli: &Cli, grid: &ConfigGrid, manifest: &RunManifest) -> Result<(String, bool), Failure> {
    let csv = |body: String| format!("{}{body}", manifest.csv_comment());
    match cli.command {
        Command::Table => {
            let point = single(grid, cli.command)?;
            let channel = point.config.bit_channel()?;
            let rows = posterior_table(&channel, &point.config.detector())?;
            Ok((csv(table_csv(&channel, &rows)), true))
        }
        Command::PeTheory if grid.is_single() => {
            let pe = exact_error_probability(&grid.points[0].config)?;
            Ok((format!("{}\n", fmt_num(pe.pe)), true))
        }
        Command::PeTheory | Command::Simulate | Command::Sweep => {
            let options = SweepOptions {
                simulate: cli.command != Command::PeTheory,
                theory: cli.command != Command::Simulate,
            };
            let rows = sweep(&grid.points, options);
            Ok((csv(sweep_csv(&rows)), true))
        }
        Command::Validate => {
            let results: Vec<(String, Vec<checks::Check>)> = grid
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let c = &p.config;
                    let title = format!(
                        "point {i}: n={} dt={} receptors={} mode={} x_on={} snr={}",
                        c.n_obs,
                        fmt_num(c.dt),
                        c.receptors,
                        c.mode,
                        fmt_num(c.x_on),
                        fmt_num(c.noise.snr())
                    );
                    (title, checks::run_checks(c))
                })
                .collect();
            Ok(checks::report(&results))
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let started = Instant::now();
    let grid = load(cli)?;
    let seed = grid.points[0].config.seed;
    let mut manifest = RunManifest::new(cli.command.name(), seed, &grid.points);

    let (text, ok) = match cli.threads {
        Some(0) => {
            return Err(Failure {
                kind: "validation",
                key: Some("threads".into()),
                message: "at least one worker thread is required".into(),
                code: 1,
            })
        }
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::runtime(format!("cannot start thread pool: {e}")))?
            .install(|| execute(cli, &grid, &manifest))?,
        None => execute(cli, &grid, &manifest)?,
    };
    emit(cli.out.as_deref(), &text)?;

    if let Some(path) = &cli.manifest {
        manifest.outputs = cli.out.iter().map(|p| p.display().to_string()).collect();
        manifest.threads = cli.threads;
        manifest.wall_seconds = started.elapsed().as_secs_f64();
        fs::write(path, manifest.to_json() + "\n")
            .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure {
            kind: "invariant",
            key: None,
            message: "one or more model invariants failed".into(),
            code: 1,
        })
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
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage key=- message={first}");
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!(
                "error: kind={} key={} message={}",
                f.kind,
                f.key.as_deref().unwrap_or("-"),
                f.message.replace('\n', " ")
            );
            ExitCode::from(f.code)
        }
    }
}
