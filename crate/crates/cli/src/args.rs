use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mcae", version, about = "Cluster-level annotation engine")]
pub struct Cli {
    /// Engine config file (flat TOML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, global = true)]
    pub schema: Option<String>,
    #[arg(long, global = true)]
    pub tile_size: Option<u32>,
    /// Annotation grid rows.
    #[arg(long, global = true)]
    pub rows: Option<u32>,
    /// Annotation grid columns.
    #[arg(long, global = true)]
    pub cols: Option<u32>,
    /// Overlap ratio of the fine-mask grid.
    #[arg(long, global = true)]
    pub overlap: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reconcile fine masks across tiles and fuse them with coarse masks.
    Fuse {
        #[arg(long)]
        fine: Option<PathBuf>,
        #[arg(long)]
        coarse: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute handcrafted mask descriptors.
    Features {
        /// Mosaic image, or a directory holding `mosaic.png`.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage windowed clustering; writes suggested clusters.
    Cluster {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_pts: Option<u32>,
        #[arg(long)]
        purity: Option<f64>,
    },
    /// Create a labeling session from clusters and fused masks.
    Session {
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the labeling API over a session.
    Serve {
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8731")]
        addr: SocketAddr,
        /// Directory of static UI assets served from `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Write the sparse label raster of a session.
    Export {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print session progress and annotation cost.
    Stats {
        #[arg(long)]
        session: PathBuf,
    },
    /// Test-set curation.
    Curate {
        #[command(subcommand)]
        command: CurateCommand,
    },
    /// Score predictions against ground truth (files or directories).
    Evaluate {
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scene with planted structure.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from the config.
    Run {
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Label suggested clusters from the ground truth.
        #[arg(long)]
        auto_label: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum CurateCommand {
    /// SKATER partition of the annotation grid; writes `<dir>/partition.json`.
    Partition {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// Region count (default: ceil(tiles / 400)).
        #[arg(long = "P", alias = "regions")]
        p: Option<usize>,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Draw the next sampling round.
    Sample {
        #[arg(long)]
        dir: PathBuf,
        /// Expected round number; checked against the next round.
        #[arg(long)]
        round: Option<u32>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Draft annotations for the tiles of a round.
    Draft {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        round: u32,
    },
    /// Apply manual edits to a draft and mark the tile refined.
    Refine {
        #[arg(long)]
        draft: PathBuf,
        /// JSON list of edits.
        #[arg(long)]
        edits: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        round: Option<u32>,
        /// Tile as `row,col`.
        #[arg(long, value_parser = parse_tile)]
        tile: Option<(u32, u32)>,
    },
}

fn parse_tile(s: &str) -> Result<(u32, u32), String> {
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    Ok((
        r.trim().parse().map_err(|e| format!("row: {e}"))?,
        c.trim().parse().map_err(|e| format!("col: {e}"))?,
    ))
}
