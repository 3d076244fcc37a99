use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use mnms_core::harness::{run_experiment, ConfigError, ExperimentConfig, HarnessError, Mode};

#[derive(Parser, Debug)]
#[command(name = "mnms", version, about = "Multitask model search with a task-conditioned controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Multitask search from a freshly initialized controller.
    Search(RunArgs),
    /// Transfer a pre-trained controller to the configured tasks.
    Transfer {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint written by an earlier search.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Exhaustively score every configuration of each task.
    BruteForce(RunArgs),
    /// Compare run directories by iterations to a reward threshold.
    Report {
        /// Optional config supplying smoothing settings and runs.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Smoothed reward a run has to reach.
        #[arg(long)]
        threshold: Option<f64>,
        /// Directory for comparison.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run directories (each with events.csv or seed-* subdirectories).
        runs: Vec<PathBuf>,
    },
}

fn load(args: &RunArgs, mode: Mode) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.mode = mode;
    if let Some(seeds) = &args.seed {
        cfg.seeds = seeds.clone();
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn build(command: Command) -> Result<ExperimentConfig, ConfigError> {
    match command {
        Command::Search(args) => load(&args, Mode::Search),
        Command::BruteForce(args) => load(&args, Mode::BruteForce),
        Command::Transfer { run, checkpoint } => {
            let mut cfg = load(&run, Mode::Transfer)?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            Ok(cfg)
        }
        Command::Report { config, threshold, out, runs } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig { output_dir: PathBuf::from("."), ..Default::default() },
            };
            cfg.mode = Mode::Report;
            if threshold.is_some() {
                cfg.report.threshold = threshold;
            }
            if !runs.is_empty() {
                cfg.report.runs = runs;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            Ok(cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = build(cli.command).map_err(HarnessError::from).and_then(|cfg| run_experiment(&cfg));
    match result {
        Ok(summary) => {
            println!("wrote {} artifacts to {}", summary.files.len(), summary.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
