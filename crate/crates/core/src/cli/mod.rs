//! Command-line front end. Exit codes: 0 success, 1 invalid input
//! (config, arguments, checkpoint), 2 runtime failure.

pub mod config;
pub mod run;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::envs::InitialKind;
use crate::error::Error;
use config::{parse_config, ExperimentConfig, SET_KINDS};
use run::{output_dir, run_adhoc_eval, run_buffer_sweep, run_experiment, run_theorem1, AdhocSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mfglab", version, about = "Finite-horizon mean field game lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a solver on every configured seed and write the artifacts.
    Run {
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare the lineage policy against per-distribution OMD.
    CheckTheorem1 {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a neural checkpoint when a second team joins mid-episode.
    Adhoc {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        join_step: usize,
        /// Mass fraction of the joining team after the merge.
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value = "gaussians")]
        newcomers: String,
        #[arg(long, default_value_t = 0)]
        newcomers_seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Retrain the neural solver once per replay capacity.
    SweepBuffer {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        capacities: Vec<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Checkpoint(_) | Error::NoisePath(_) => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    }
}

fn load(path: &PathBuf, output: &Option<PathBuf>) -> Result<ExperimentConfig, i32> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        EXIT_INVALID
    })?;
    let mut cfg = parse_config(&text).map_err(|e| {
        eprintln!("error: invalid config {}:\n{e}", path.display());
        EXIT_INVALID
    })?;
    if let Some(o) = output {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

/// Runs one parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Run { config, output } => {
            let cfg = match load(config, output) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let dir = output_dir(&cfg);
            run_experiment(&cfg, &dir).map(|out| {
                if let Some((k, m, s)) = out.summary.last() {
                    println!("iteration {k}: mean exploitability {m} (std {s})");
                }
                println!("wrote {}", out.dir.display());
            })
        }
        Command::CheckTheorem1 { config, output } => {
            let cfg = match load(config, output) {
                Ok(c) => c,
                Err(code) => return code,
            };
            run_theorem1(&cfg, &output_dir(&cfg)).map(|r| println!("max residual {:e}", r.residual))
        }
        Command::Adhoc {
            config,
            checkpoint,
            join_step,
            fraction,
            newcomers,
            newcomers_seed,
            output,
        } => {
            let cfg = match load(config, output) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let Some(kind) = parse_kind(newcomers) else {
                eprintln!("error: unknown newcomer kind {newcomers:?}");
                return EXIT_INVALID;
            };
            if !(*fraction > 0.0 && *fraction < 1.0) {
                eprintln!("error: fraction must lie in (0, 1)");
                return EXIT_INVALID;
            }
            let spec = AdhocSpec {
                checkpoint: checkpoint.clone(),
                join_step: *join_step,
                fraction: *fraction,
                newcomers: kind,
                newcomers_seed: *newcomers_seed,
            };
            run_adhoc_eval(&cfg, &spec, &output_dir(&cfg)).map(|_| println!("wrote adhoc flows"))
        }
        Command::SweepBuffer {
            config,
            capacities,
            output,
        } => {
            let cfg = match load(config, output) {
                Ok(c) => c,
                Err(code) => return code,
            };
            run_buffer_sweep(&cfg, capacities, &output_dir(&cfg)).map(|rows| {
                for (cap, summary) in rows {
                    if let Some((_, m, s)) = summary.last() {
                        println!("capacity {cap}: final mean {m} (std {s})");
                    }
                }
            })
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn parse_kind(name: &str) -> Option<InitialKind> {
    SET_KINDS.iter().find(|(n, _)| *n == name).map(|(_, k)| *k)
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}
