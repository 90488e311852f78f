mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ConfigError;

#[derive(Parser)]
#[command(
    name = "samsa",
    version,
    about = "Sampling-based self-attention: training, checks and benchmarks"
)]
#[command(after_long_help = config::keys_help())]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Seed for initialization, noise and batch order.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Floating-point width.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    pub precision: Option<String>,
}

#[derive(Args, Clone)]
pub struct Overrides {
    /// TOML config file with [run], [task], [model] and [train] sections.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. --set model.k=16 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (run.out_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// task.kind: seq-select, seq-listops-lite, graph-degree, cloud-centroid.
    #[arg(long)]
    pub task: Option<String>,
    /// model.attention: samsa or full.
    #[arg(long)]
    pub attention: Option<String>,
    /// model.mode: hard or soft.
    #[arg(long)]
    pub mode: Option<String>,
    /// model.k.
    #[arg(long)]
    pub k: Option<usize>,
    /// train.steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// train.lr.
    #[arg(long)]
    pub lr: Option<f64>,
    /// train.batch_size.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config echo, metrics CSV, summary JSON and checkpoint.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        /// Also write the untrained weights to initial.ckpt.
        #[arg(long)]
        save_initial: bool,
    },
    /// Evaluate a checkpoint on a split of the task it was trained on.
    Eval(commands::EvalArgs),
    /// Finite-difference gradient checks (64-bit).
    Gradcheck(commands::GradcheckArgs),
    /// Compare top-k selection with exhaustive subset search.
    Oracle(commands::OracleArgs),
    /// Layer forward timings over sequence lengths.
    Bench(commands::BenchArgs),
    /// Print a checkpoint header as JSON.
    InspectCheckpoint { path: PathBuf },
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_CHECK: u8 = 4;

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<samsa_core::Error>() {
        Some(samsa_core::Error::Config(_)) => EXIT_CONFIG,
        Some(samsa_core::Error::Diverged { .. } | samsa_core::Error::NonFinite(_)) => EXIT_NUMERIC,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SAMSA_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let c = &cli.common;
    let result = match cli.command {
        Command::Train {
            overrides,
            save_initial,
        } => commands::train(&overrides, c, save_initial),
        Command::Eval(a) => commands::eval(&a, c),
        Command::Gradcheck(a) => commands::gradcheck(&a, c),
        Command::Oracle(a) => commands::oracle(&a, c),
        Command::Bench(a) => commands::bench(&a, c),
        Command::InspectCheckpoint { path } => commands::inspect(&path, c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
