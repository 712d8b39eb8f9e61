//! `sava` — doubly-sequential online selective inference runner.
//!
//! Subcommands drive the engine and the online-FDR baselines over shared
//! worlds and write plot-ready metric tables: `simulate` for the synthetic
//! models, `counterexample` for the adversarial level rules, `sweep-k` for
//! the bandwidth grid, `ingest-run` for rating-stream replays, and `report`
//! for merging tables and extracting per-task level traces.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod tables;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "SAVA_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "sava",
    version,
    about = "Doubly-sequential online selective inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the synthetic-model benchmark: selected methods on shared worlds.
    Simulate(SimulateArgs),
    /// Run an adversarial level rule against the valid ones on a
    /// counterexample world.
    Counterexample(CounterexampleArgs),
    /// Sweep the neighborhood bandwidth k against arrival probabilities.
    SweepK(SweepKArgs),
    /// Replay a timestamped rating stream.
    IngestRun(IngestRunArgs),
    /// Merge metric tables; optionally extract per-task level traces from a
    /// decision log.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Method {
    Sava,
    #[value(name = "sava-classical")]
    SavaClassical,
    #[value(name = "sava-armspec")]
    SavaArmspec,
    #[value(name = "savaspecial")]
    SavaSpecial,
    Method1,
    Method2,
    #[value(name = "lordpp")]
    LordPp,
    Saffron,
    Addis,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sava => "sava",
            Method::SavaClassical => "sava-classical",
            Method::SavaArmspec => "sava-armspec",
            Method::SavaSpecial => "savaspecial",
            Method::Method1 => "method1",
            Method::Method2 => "method2",
            Method::LordPp => "lordpp",
            Method::Saffron => "saffron",
            Method::Addis => "addis",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::LordPp | Method::Saffron | Method::Addis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Truncgauss,
    Gauss,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Root seed; per-replication seeds are derived so a shorter run is a
    /// prefix of a longer one.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory (default: $SAVA_OUT_DIR or ./sava-out).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for replication-level parallelism (default: all
    /// cores). Results are independent of this setting.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Cap on reported decision-time indices.
    #[arg(long, default_value_t = 800)]
    pub max_points: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = ModelKind::Truncgauss)]
    pub model: ModelKind,
    /// Effect magnitude mu (> 0).
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Truncation bound K for the truncated-Gaussian model.
    #[arg(long, default_value_t = 2.0)]
    pub bound: f64,
    /// Probability that a task's true state is arm A.
    #[arg(long, default_value_t = 0.5)]
    pub pi_plus: f64,
    /// Temporal horizon T.
    #[arg(long = "horizon", visible_alias = "T", default_value_t = 300)]
    pub horizon: i64,
    /// Per-time arrival probability.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub p: f64,
    /// Target FSR level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Neighborhood bandwidth.
    #[arg(long, default_value_t = 25)]
    pub k: usize,
    /// Arm-specific budgets/windows (default to --alpha/--k).
    #[arg(long)]
    pub alpha_a: Option<f64>,
    #[arg(long)]
    pub alpha_b: Option<f64>,
    #[arg(long)]
    pub k_a: Option<usize>,
    #[arg(long)]
    pub k_b: Option<usize>,
    /// Tolerance duration b for every task (default: infinite).
    #[arg(long)]
    pub b: Option<i64>,
    /// Number of replications.
    #[arg(long, default_value_t = 50)]
    pub reps: u64,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "sava,lordpp,saffron,addis"
    )]
    pub methods: Vec<Method>,
}

#[derive(Debug, Args)]
pub struct CounterexampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Which counterexample world (1 or 2).
    #[arg(long)]
    pub which: u8,
    /// Target FSR level.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Neighborhood bandwidth for the level rules.
    #[arg(long, default_value_t = 25)]
    pub k: usize,
    #[arg(long, default_value_t = 200)]
    pub reps: u64,
    /// Methods to run (engine rules only; defaults to the adversarial rule
    /// for the chosen world plus the valid controls).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
}

#[derive(Debug, Args)]
pub struct SweepKArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',', default_value = "2,10,25,100")]
    pub k_list: Vec<usize>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.05,0.3333333333333333,0.6666666666666666"
    )]
    pub p_list: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModelKind::Gauss)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 0.1)]
    pub mu: f64,
    #[arg(long, default_value_t = 2.0)]
    pub bound: f64,
    #[arg(long, default_value_t = 0.5)]
    pub pi_plus: f64,
    #[arg(long = "horizon", visible_alias = "T", default_value_t = 300)]
    pub horizon: i64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub reps: u64,
}

#[derive(Debug, Args)]
pub struct IngestRunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Delimited review table (item_id, user_id, rating, timestamp).
    #[arg(long)]
    pub input: PathBuf,
    /// Keep items with strictly more reviews than this.
    #[arg(long, default_value_t = 50)]
    pub min_reviews: usize,
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    pub skip_bad_rows: bool,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 2.0)]
    pub bound: f64,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "sava,lordpp,saffron,addis"
    )]
    pub methods: Vec<Method>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metric tables to merge (at least one).
    #[arg(long, value_delimiter = ',')]
    pub inputs: Vec<PathBuf>,
    /// Merged output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Decision log to extract level traces from.
    #[arg(long)]
    pub trace_log: Option<PathBuf>,
    /// Task ids whose level traces to extract.
    #[arg(long, value_delimiter = ',')]
    pub trace_tasks: Vec<usize>,
    /// Trace output path.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Counterexample(args) => commands::counterexample(args),
        Command::SweepK(args) => commands::sweep_k(args),
        Command::IngestRun(args) => commands::ingest_run(args),
        Command::Report(args) => commands::report(args),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            std::process::exit(1);
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
