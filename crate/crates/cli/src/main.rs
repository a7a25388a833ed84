//! `reloc` — batch pipeline for global re-localization in point-cloud maps.
//!
//! Exit codes: 0 success, 1 domain failure (for example a flagged-failed
//! re-localization or diverged training), 2 usage or input errors.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "reloc", version, about = "Global re-localization for 3D LiDAR in point-cloud maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration JSON (see configs/default.json).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's descriptor backend.
    #[arg(long, value_parser = ["learned", "spectral"])]
    backend: Option<String>,
    /// Override the config's top-k retrieval depth.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tunnel world: map, trajectory, scans, labels.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        straights: usize,
        #[arg(long, default_value_t = 1)]
        turns: usize,
        #[arg(long, default_value_t = 1)]
        junctions: usize,
        /// Sample spacing along the trajectory, meters.
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        /// Gaussian range noise sigma, meters.
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        /// Per-ray dropout probability.
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        /// Voxel size for thinning the accumulated map, meters.
        #[arg(long, default_value_t = 0.12)]
        map_voxel: f64,
    },
    /// Partition a map along its trajectory into robot-frame submaps.
    Partition {
        #[command(flatten)]
        config: ConfigArgs,
        /// Point-cloud map (PCD v0.7).
        #[arg(long)]
        map: PathBuf,
        /// Trajectory file.
        #[arg(long)]
        trajectory: PathBuf,
        /// Trajectory format.
        #[arg(long, default_value = "tum", value_parser = ["tum", "xyz"])]
        format: String,
        /// Output directory for submap PCDs and the manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the descriptor network on a dataset directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory (scans/, trajectory.txt, labels.csv).
        #[arg(long)]
        dataset: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Fraction of samples held out for the per-epoch loss probe.
        #[arg(long, default_value_t = 0.0)]
        heldout_fraction: f64,
        /// Training log (one JSON object per epoch).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Extract descriptors for all submaps and build the database.
    BuildDb {
        #[command(flatten)]
        config: ConfigArgs,
        /// Submap directory produced by `partition`.
        #[arg(long)]
        submaps: PathBuf,
        /// Checkpoint for the learned backend.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output database file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-localize a single scan against a database.
    Relocalize {
        #[command(flatten)]
        config: ConfigArgs,
        /// Query scan (PCD v0.7).
        #[arg(long)]
        scan: PathBuf,
        /// Database file from `build-db`.
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Omit timing fields for byte-reproducible reports.
        #[arg(long)]
        stable: bool,
    },
    /// Consume a directory of scans in order, classify each frame, and
    /// re-localize whenever the junction trigger fires.
    Monitor {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory of numbered scan PCDs.
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        db: PathBuf,
        /// Checkpoint for the learned backend (required: classification).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory for events.jsonl and per-firing reports.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stable: bool,
    },
    /// Batch-query a labeled dataset and compute the metric suite.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory (scans/, trajectory.txt, labels.csv).
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Recall curve CSV output path.
        #[arg(long)]
        curve_csv: Option<PathBuf>,
        /// Query every n-th dataset sample.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Success radius for recall@k, meters.
        #[arg(long, default_value_t = 3.0)]
        success_radius: f64,
        #[arg(long)]
        stable: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(commands::Outcome::Success) => ExitCode::from(0),
        Ok(commands::Outcome::DomainFailure(reason)) => {
            eprintln!("reloc: {reason}");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("reloc: error: {err:#}");
            ExitCode::from(2)
        }
    }
}
