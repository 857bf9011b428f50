use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssnll_cli::experiment::{self, Domain};
use ssnll_cli::{ExperimentConfig, Result};

#[derive(Parser)]
#[command(
    name = "ssnll",
    version,
    about = "Source-free domain adaptation by self-supervised noisy label learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        Ok(config)
    }
}

#[derive(Args)]
struct CheckpointArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "target")]
    domain: Domain,
    /// Seed for dataset generation or subsampling; defaults to the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train on the source domain, adapt to the target, write metrics and checkpoints.
    Run(ConfigArgs),
    /// Adapt once per split ratio listed in `sweep`.
    Sweep(ConfigArgs),
    /// Write feature-layer activations of a checkpoint as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        args: CheckpointArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report accuracy, per-class recall and confusion of a checkpoint.
    Eval(CheckpointArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn seed_or_first(seed: Option<u64>, config: &ExperimentConfig) -> u64 {
    seed.unwrap_or(config.seeds[0])
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let config = args.load()?;
            let summary = experiment::cmd_run(&config)?;
            print!("{}", summary.table());
            println!("outputs written to {}", config.output_dir.display());
        }
        Command::Sweep(args) => {
            let config = args.load()?;
            let points = experiment::cmd_sweep(&config)?;
            println!("{:>6} {:>10} {:>10}", "r", "final", "best");
            for p in points {
                let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
                println!(
                    "{:>6} {:>10} {:>10}",
                    p.r,
                    show(p.final_accuracy),
                    show(p.best_accuracy)
                );
            }
            println!("sweep written to {}", config.output_dir.join("sweep.csv").display());
        }
        Command::ExportEmbeddings { args, out } => {
            let config = args.config.load()?;
            let seed = seed_or_first(args.seed, &config);
            let rows = experiment::cmd_export_embeddings(&config, &args.checkpoint, args.domain, seed, &out)?;
            println!("{rows} rows written to {}", out.display());
        }
        Command::Eval(args) => {
            let config = args.config.load()?;
            let seed = seed_or_first(args.seed, &config);
            let evaluation = experiment::cmd_eval(&config, &args.checkpoint, args.domain, seed)?;
            print!("{}", experiment::format_evaluation(&evaluation));
        }
    }
    Ok(())
}
