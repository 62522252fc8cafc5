use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use siftfuse_cli::commands::{self, with_threads};
use siftfuse_cli::config::RunConfig;
use siftfuse_cli::CliError;

#[derive(Parser)]
#[command(
    name = "siftfuse",
    version,
    about = "Keypoint-graph fusion pipeline: extraction, graphs, training, robustness sweeps",
    after_help = RunConfig::help_table()
)]
struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker thread count override (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract keypoints from a PPM image (text file + SVG overlay).
    Extract { image: PathBuf },
    /// Render k-NN keypoint graphs for the configured k list.
    Graph { image: PathBuf },
    /// Train a model variant and write its checkpoint.
    Train {
        /// `fused` or `baseline`; defaults to the config's use_graph_branch.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Attack checkpoints over the epsilon grid and report accuracies.
    Sweep {
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Keypoint stability diagnostics under Gaussian noise.
    Stability { image: PathBuf },
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.set("out_dir", &out.to_string_lossy())?;
    }
    if let Some(threads) = cli.threads {
        cfg.set("threads", &threads.to_string())?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    let threads = cfg.threads()?;
    with_threads(threads, || match &cli.command {
        Command::Extract { image } => commands::cmd_extract(image, &cfg),
        Command::Graph { image } => commands::cmd_graph(image, &cfg),
        Command::Train { variant } => commands::cmd_train(&cfg, variant.as_deref()),
        Command::Sweep { checkpoints } => commands::cmd_sweep(checkpoints, &cfg),
        Command::Stability { image } => commands::cmd_stability(image, &cfg),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
