use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::Format;

/// Environment variable read for the worker count when neither the flag nor
/// the config sets one.
pub const WORKERS_ENV: &str = "SHEARMIX_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            _ => 2,
        }
    }
}

impl From<shearmix::error::Error> for CliError {
    fn from(e: shearmix::error::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Randomly shifted alternating sine shears on the 2-torus.
///
/// Option precedence: command-line flag, then config document, then
/// (for the worker count) the SHEARMIX_WORKERS environment variable.
#[derive(Debug, Parser)]
#[command(name = "shearmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config: {"seed", "workers", "out", "format", "params": {...}}.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; required by every command that samples.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file (default stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fixed-point, Jacobian, determinant, constancy-on-R and QIFT checks.
    Verify,
    /// Mixing-rate sweep over amplitudes (CSV table by default).
    Sweep {
        /// Comma-separated amplitudes, overriding the config list.
        #[arg(long, value_delimiter = ',')]
        amplitudes: Option<Vec<f64>>,
    },
    /// Harris constants in log domain plus the inequality audit.
    Constants {
        #[arg(long)]
        amplitude: Option<f64>,
    },
    /// Coupling plan from a pair into the antipodal set.
    Couple,
    /// Monte Carlo drift check of the Lyapunov function.
    Drift,
    /// Monte Carlo minorization near a center pair.
    Minorize,
}

/// Resolved run options.
pub struct RunOpts {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl RunOpts {
    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("this command samples at random and needs --seed (or \"seed\" in the config)".into()))
    }
}

/// Command output and whether every check passed.
pub struct Outcome {
    pub body: Vec<u8>,
    pub pass: bool,
    pub message: Option<String>,
}

fn setup<P: serde::de::DeserializeOwned + Default>(cli: &Cli) -> Result<(P, RunOpts), CliError> {
    let doc: config::Doc<P> = config::load(cli.config.as_deref())?;
    let workers = match cli.workers.or(doc.workers) {
        Some(w) => Some(w),
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => Some(v.parse().map_err(|_| CliError::Usage(format!("{WORKERS_ENV}={v} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::Usage("worker count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok((
        doc.params,
        RunOpts {
            seed: cli.seed.or(doc.seed),
            out: cli.out.clone().or(doc.out),
            format: cli.format.or(doc.format),
        },
    ))
}

fn run(cli: &Cli) -> Result<(Outcome, RunOpts), CliError> {
    match &cli.command {
        Command::Verify => {
            let (p, o) = setup(cli)?;
            Ok((commands::verify(&p, &o)?, o))
        }
        Command::Sweep { amplitudes } => {
            let (mut p, o): (config::SweepParams, _) = setup(cli)?;
            if let Some(a) = amplitudes {
                p.amplitudes = a.clone();
            }
            Ok((commands::sweep(&p, &o)?, o))
        }
        Command::Constants { amplitude } => {
            let (mut p, o): (config::ConstantsParams, _) = setup(cli)?;
            if let Some(a) = amplitude {
                p.amplitude = *a;
            }
            Ok((commands::constants(&p, &o)?, o))
        }
        Command::Couple => {
            let (p, o) = setup(cli)?;
            Ok((commands::couple(&p, &o)?, o))
        }
        Command::Drift => {
            let (p, o) = setup(cli)?;
            Ok((commands::drift(&p, &o)?, o))
        }
        Command::Minorize => {
            let (p, o) = setup(cli)?;
            Ok((commands::minorize(&p, &o)?, o))
        }
    }
}

fn emit(body: &[u8], out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(body).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|(outcome, opts)| {
        emit(&outcome.body, opts.out.as_ref())?;
        Ok(outcome)
    });
    match result {
        Ok(o) if o.pass => ExitCode::SUCCESS,
        Ok(o) => {
            eprintln!("shearmix: {}", o.message.as_deref().unwrap_or("checks failed"));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("shearmix: {e}");
            if e.code() == 2 {
                eprintln!("Run `shearmix --help` for usage.");
            }
            ExitCode::from(e.code())
        }
    }
}
