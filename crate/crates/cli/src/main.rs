mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "micronet", version, about = "MicroNet architectures, cost ledgers, verification, toy training and inference")]
struct Cli {
    /// Worker threads for kernel parallelism; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "MICRONET_THREADS")]
    threads: Option<usize>,

    /// Seed for every random choice (init, data, shuffling, dropout).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ArchArgs {
    /// Built-in architecture name (M0..M3, M0-kp..M3-kp, M0-narrow).
    pub arch: Option<String>,

    /// TOML architecture file instead of a built-in name.
    #[arg(long, conflicts_with = "arch")]
    pub config: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Exclude {
    Classifier,
    Heatmap,
    Attention,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate an architecture and print its per-stage table.
    Build {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        json: bool,
    },
    /// Per-layer MAdds and parameter ledger.
    Flops {
        #[command(flatten)]
        arch: ArchArgs,
        /// Input resolution as HxW.
        #[arg(long, value_parser = commands::parse_hw)]
        input: Option<(usize, usize)>,
        /// Drop these rows from the printed ledger.
        #[arg(long, value_enum)]
        exclude: Vec<Exclude>,
        /// Compare whole-model totals with the published budget (±20%).
        #[arg(long)]
        check: bool,
        /// Ledger of the full-rank partner instead.
        #[arg(long)]
        full_rank: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run a property suite: rank, oracle, grad, shiftmax or all.
    Verify {
        suite: String,
        #[arg(long)]
        json: bool,
    },
    /// Train a classifier on synthetic blobs or an image directory.
    Train(commands::TrainArgs),
    /// Run a weight bundle on an image.
    Infer {
        bundle: PathBuf,
        image: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Keypoint models: write the heatmaps here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Build { arch, json } => commands::build(&arch, json),
        Command::Flops { arch, input, exclude, check, full_rank, json } => {
            commands::flops(&arch, input, &exclude, check, full_rank, json, cli.seed)
        }
        Command::Verify { suite, json } => commands::verify(&suite, json, cli.seed),
        Command::Train(args) => commands::train(&args, cli.seed),
        Command::Infer { bundle, image, top_k, out, json } => commands::infer(&bundle, &image, top_k, out.as_deref(), json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return commands::report(&CliError::Usage(e.to_string().trim().to_string()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => commands::report(&e),
    }
}
