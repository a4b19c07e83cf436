//! Feature-based overlap detection for map tiles.
//!
//! Two tiles are matched with SIFT or ORB features, the brute-force matches
//! are verified with a RANSAC homography, and the fraction of matches that
//! survive (the inlier ratio) decides whether the tiles overlap.
//!
//! ```no_run
//! use tilematch_core::{evaluate_pair, DescriptorKind, EvalConfig, Image};
//!
//! let a = Image::load("a.png")?;
//! let b = Image::load("b.png")?;
//! let report = evaluate_pair(&a, &b, DescriptorKind::Sift, 500, &EvalConfig::default())?;
//! println!("inlier ratio {:.3}", report.inlier_ratio);
//! # Ok::<(), tilematch_core::Error>(())
//! ```

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod image_core;
pub mod matcher;
pub mod orb;
pub mod rng;
pub mod sift;
pub mod viz;

pub use dataset::{
    ground_truth_from_grid, load_labels, synthesize_tiles, Adjacency, GroundTruthLabel, SynthOptions, TileManifest,
    TileRecord,
};
pub use error::{Error, Result};
pub use evaluation::{
    evaluate_dataset, evaluate_pair, DescriptorKind, EvalConfig, EvaluationSummary, PairReport,
};
pub use geometry::{Correspondence, Homography, RansacConfig, RansacResult};
pub use image_core::Image;
pub use matcher::{brute_force_match, DescriptorList, Match, MatchSet, Metric};
pub use orb::{BriefDescriptor, OrbKeypoint, OrbParams};
pub use sift::{SiftDescriptor, SiftKeypoint, SiftParams};
