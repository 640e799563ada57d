//! `f3`: experiment runs, verification suites, sampler benchmarks and
//! artifact export for federated feature fusion.
//!
//! Exit codes: 0 on success, 1 when a property or run fails, 2 on a usage
//! or configuration error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use f3::F3Error;

#[derive(Parser, Debug)]
#[command(name = "f3", version, about = "Federated feature fusion experiments")]
struct Cli {
    /// Worker threads for the parallel pool (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every variant of an experiment config for each seed.
    Run(RunArgs),
    /// Run verification suites and write JSON reports with CSV evidence.
    Verify(VerifyArgs),
    /// Time the two edge relaxations and count their random draws.
    Bench(BenchArgs),
    /// Generate a synthetic dataset file usable as a run's data source.
    GenData(GenDataArgs),
    /// Export learned edge probabilities and alignment matrices as CSV.
    ExportHeatmaps(ExportArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config, TOML (or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate the config and exit without training.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// One of cdf, bias, sinkhorn, permutation, gradcheck, or `all`.
    #[arg(default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `<suite>.json` and the evidence CSVs.
    #[arg(long, default_value = "verify")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Graph sizes (client counts), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "12,50")]
    sizes: Vec<usize>,
    /// Edge samples per (method, size).
    #[arg(long, default_value_t = 1_000_000)]
    edges: u64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Experiment config with synthetic data; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generation seed; defaults to the config's first seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "source")]
struct ExportSource {
    /// A global-model checkpoint written by `run`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Train the config's graph variants on one seed and export each.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    source: ExportSource,
    /// Seed used with `--config`; defaults to the config's first seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl From<F3Error> for CliError {
    fn from(e: F3Error) -> Self {
        match e {
            F3Error::Config(_) | F3Error::Version { .. } | F3Error::Format { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Run(a) => commands::run(&a.config, a.seed, a.out.as_deref(), a.dry_run),
        Command::Verify(a) => commands::verify(&a.suite, a.seed, &a.out),
        Command::Bench(a) => commands::bench(&a.sizes, a.edges, a.tau, a.seed, a.out.as_deref()),
        Command::GenData(a) => commands::gen_data(a.config.as_deref(), a.seed, &a.out),
        Command::ExportHeatmaps(a) => match (a.source.model, a.source.config) {
            (Some(m), _) => commands::export_model(&m, &a.out),
            (None, Some(c)) => commands::export_config(&c, a.seed, &a.out),
            (None, None) => unreachable!("clap requires one source"),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
