//! Experiment harness CLI. All logic lives in the library; this binary
//! parses arguments, resolves the config, and maps errors to exit codes
//! (2 for configuration problems, 3 for numerical failures).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedtail::config::ExperimentSpec;
use fedtail::error::Error;
use fedtail::harness::{self, RunOptions};

#[derive(Parser)]
#[command(name = "fedtail", version, about = "Federated domain-generalization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key config overrides, e.g. --set fedtail.rho=0.05
    #[arg(long = "set", value_name = "K=V")]
    set: Vec<String>,
    /// Base seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment; writes metrics.jsonl and summary.csv.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Write global+teacher checkpoints every N rounds.
        #[arg(long, value_name = "N")]
        checkpoint_every: Option<u32>,
    },
    /// Run the five-row loss-term ladder; writes ablation.csv.
    Ablation {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Export feature embeddings of validation data under a checkpoint.
    ExportEmbeddings {
        #[command(flatten)]
        common: CommonArgs,
        /// A round_{r}.params checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Materialize the synthetic domains as dataset files.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn resolve_spec(common: &CommonArgs) -> Result<ExperimentSpec, Error> {
    let mut spec = match &common.config {
        Some(path) => ExperimentSpec::load(path, &common.set)?,
        None => ExperimentSpec::from_overrides(&common.set)?,
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn out_dir(common: &CommonArgs, spec: &ExperimentSpec) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&spec.out_dir))
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            common,
            checkpoint_every,
        } => {
            let spec = resolve_spec(&common)?;
            let opts = RunOptions {
                checkpoint_every,
                threads: common.threads,
            };
            harness::run(&spec, &out_dir(&common, &spec), &opts)?;
            Ok(())
        }
        Command::Ablation { common } => {
            let spec = resolve_spec(&common)?;
            let opts = RunOptions {
                checkpoint_every: None,
                threads: common.threads,
            };
            harness::ablation(&spec, &out_dir(&common, &spec), &opts)
        }
        Command::ExportEmbeddings { common, checkpoint } => {
            let spec = resolve_spec(&common)?;
            harness::export_embeddings(&spec, &checkpoint, &out_dir(&common, &spec))
        }
        Command::GenData { common } => {
            let spec = resolve_spec(&common)?;
            harness::gen_data(&spec, &out_dir(&common, &spec))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDTAIL_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
