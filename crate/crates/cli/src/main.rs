mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use trajsim_core::tasks::Variant;
use trajsim_core::{Error, Result, RunConfig};

use commands::{Ctx, Protocol};

#[derive(Parser, Debug)]
#[command(name = "trajsim", version, about = "Trajectory similarity learning pipeline")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, short, global = true, env = "TRAJSIM_CONFIG")]
    config: Option<PathBuf>,

    /// Built-in defaults used when no config file is given.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Paper)]
    profile: Profile,

    /// Override a config value, e.g. `--set pretrain.tau=0.1`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Run every parallel path on a single thread.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    Paper,
    Desk,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic trajectories as JSONL.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest, filter and split the raw dataset.
    Preprocess,
    /// Build the cell transition graph from the training split.
    BuildGraph,
    /// Train cell embeddings on the graph.
    TrainCells,
    /// Contrastive pretraining of the trajectory encoder.
    Pretrain,
    /// Fine-tune for distance approximation.
    Finetune,
    /// Odd/even retrieval evaluation.
    Evaluate {
        #[arg(long, value_enum, default_value_t = Protocol::Rank)]
        protocol: Protocol,
    },
    /// Throughput and FLOPs report for both attention modes.
    Bench,
    /// Retrain and evaluate ablation variants.
    Ablate {
        /// Comma-separated: full, -MSE, -HSE, -CGA.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        variants: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Io { .. } | Error::Format(_) | Error::Domain(_) | Error::Version { .. } | Error::MissingArtifact { .. } => 2,
        Error::Numeric(_) | Error::Shape { .. } => 3,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            e => e,
        })?,
        None => match cli.profile {
            Profile::Paper => RunConfig::default(),
            Profile::Desk => RunConfig::desk(),
        },
    };
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    if let Command::Synth { count, out } = &cli.command {
        return commands::synth(&cfg, *count, out);
    }
    let ctx = Ctx::new(cfg)?;
    match cli.command {
        Command::Synth { .. } => unreachable!("handled above"),
        Command::Preprocess => commands::preprocess(&ctx),
        Command::BuildGraph => commands::build_graph(&ctx),
        Command::TrainCells => commands::train_cells(&ctx),
        Command::Pretrain => commands::pretrain(&ctx),
        Command::Finetune => commands::finetune(&ctx),
        Command::Evaluate { protocol } => commands::evaluate(&ctx, protocol),
        Command::Bench => commands::bench(&ctx),
        Command::Ablate { variants, seeds } => {
            let variants = match variants {
                None => Variant::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .map(|n| Variant::parse(n).ok_or_else(|| Error::Config(format!("unknown ablation variant `{n}`"))))
                    .collect::<Result<_>>()?,
            };
            commands::ablation(&ctx, &variants, &seeds)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
