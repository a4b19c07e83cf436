mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tilematch", version, about = "Detect overlapping map tiles with SIFT/ORB matching and RANSAC")]
pub struct Cli {
    /// Top-level seed; RANSAC and the BRIEF pattern derive theirs from it [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` config file; flags override it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (detect, match) or directory (evaluate, synth, fetch)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct PipelineArgs {
    /// sift or orb [default: sift]
    #[arg(long)]
    pub descriptor: Option<String>,
    /// Keypoint budget [default: 500]
    #[arg(long)]
    pub budget: Option<usize>,
    /// Inlier-ratio threshold for predicting overlap [default: 0.1]
    #[arg(long)]
    pub rho: Option<f64>,
    /// RANSAC reprojection threshold in pixels [default: 3]
    #[arg(long)]
    pub ransac_epsilon: Option<f64>,
    /// RANSAC iteration cap [default: 2000]
    #[arg(long)]
    pub ransac_iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VizArg {
    Pre,
    Post,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect and describe keypoints; writes JSON lines [default out: <image>.<descriptor>.jsonl]
    Detect {
        image: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Match two images and verify with RANSAC; writes a JSON report [default out: match.json]
    Match {
        image_a: PathBuf,
        image_b: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Also draw the matches next to the report
        #[arg(long, value_enum)]
        viz: Option<VizArg>,
    },
    /// Evaluate every tile pair of a dataset [default out: results/]
    Evaluate {
        /// manifest.json; labels.json is read from the same directory
        manifest: PathBuf,
        /// Ground-truth labels file [default: labels.json next to the manifest]
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Comma-separated descriptors [default: sift,orb]
        #[arg(long)]
        descriptors: Option<String>,
        /// Comma-separated keypoint budgets [default: 100,200,500,1000,2000]
        #[arg(long)]
        budgets: Option<String>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Cut a base image into overlapping tiles with ground truth [default out: synthetic/]
    Synth {
        /// Base image; a textured one is generated from the seed when omitted
        #[arg(long)]
        base: Option<PathBuf>,
        /// Side of the generated base image [default: 1024]
        #[arg(long)]
        base_size: Option<usize>,
        /// Tile side in pixels [default: 256]
        #[arg(long)]
        tile_size: Option<usize>,
        /// Overlap fraction between neighbours [default: 0.5]
        #[arg(long)]
        overlap: Option<f64>,
        /// Per-tile Gaussian noise on the [0, 1] scale [default: 0]
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Download a tile grid from a static-map endpoint [default out: tiles/]
    Fetch {
        /// Latitude of the first tile's centre
        #[arg(long, allow_hyphen_values = true)]
        origin_lat: Option<f64>,
        /// Longitude of the first tile's centre
        #[arg(long, allow_hyphen_values = true)]
        origin_lon: Option<f64>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        /// Overlap fraction between neighbours [default: 0.5]
        #[arg(long)]
        overlap: Option<f64>,
        /// Tile side in pixels [default: 512]
        #[arg(long)]
        tile_size: Option<usize>,
        /// Map zoom level [default: 18]
        #[arg(long)]
        zoom: Option<u32>,
        /// Endpoint URL [default: the Google static maps API]
        #[arg(long)]
        base_url: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
