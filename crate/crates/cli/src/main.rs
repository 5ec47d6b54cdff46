mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

const THREADS_VAR: &str = "STRUCTLENS_THREADS";

/// Layer-structure analysis of transformer hidden-state dumps.
#[derive(Parser)]
#[command(name = "layertree", version)]
struct Cli {
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Similarity metric (cka, cos-base, cos-struct, tree-edit, edge-edit) or,
    /// for `prune`, block-influence metric (cos-base-bi, cos-struct-bi,
    /// tree-bi, edge-bi).
    #[arg(long, global = true)]
    metric: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build one maximum spanning tree per layer of each dump.
    BuildTrees {
        #[arg(required = true)]
        dumps: Vec<PathBuf>,
    },
    /// Layer-by-layer similarity matrices as CSV, PGM and JSON.
    Similarity {
        #[arg(required = true)]
        dumps: Vec<PathBuf>,
        /// Write one matrix averaged over all dumps instead of one per dump.
        #[arg(long)]
        average: bool,
        /// Sum token cosines instead of averaging them (cos-base only).
        #[arg(long)]
        raw_sum: bool,
    },
    /// Spectral clustering of layers from matrix JSON files or dumps.
    Cluster {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Contiguous 4-node subtree statistics per layer.
    Subtrees {
        #[arg(required = true)]
        dumps: Vec<PathBuf>,
    },
    /// Frequent subtree patterns across the layers of one dump.
    Mine {
        dump: PathBuf,
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        min_support: usize,
        /// Report every frequent pattern with at most `size` nodes.
        #[arg(long)]
        up_to: bool,
    },
    /// Rank layers for removal by block influence over a calibration set.
    Prune {
        /// Directory of `.sldump` calibration files.
        calibration_dir: PathBuf,
        /// Layers to remove; defaults to a quarter of the blocks.
        #[arg(long)]
        k: Option<usize>,
    },
}

fn configure_threads() -> Result<()> {
    let threads = match std::env::var(THREADS_VAR) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_VAR} must be a non-negative integer, got {v:?}"))?,
        Err(std::env::VarError::NotPresent) => 0,
        Err(e) => bail!("{THREADS_VAR}: {e}"),
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let metric = cli.metric.as_deref();
    let outputs = match &cli.command {
        Command::BuildTrees { dumps } => commands::build_trees(dumps)?,
        Command::Similarity {
            dumps,
            average,
            raw_sum,
        } => commands::similarity(dumps, metric, *average, *raw_sum)?,
        Command::Cluster { inputs, k } => commands::cluster(inputs, metric, *k, cli.seed)?,
        Command::Subtrees { dumps } => commands::subtrees(dumps)?,
        Command::Mine {
            dump,
            size,
            min_support,
            up_to,
        } => commands::mine(dump, *size, *min_support, *up_to)?,
        Command::Prune { calibration_dir, k } => commands::prune(calibration_dir, metric, *k)?,
    };
    let names: Vec<String> = outputs.names().map(str::to_string).collect();
    outputs.commit(&cli.out)?;
    for name in names {
        println!("{}", cli.out.join(name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
