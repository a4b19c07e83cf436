//! Run configuration: command-line flags over a flat `key = value` file over
//! built-in defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use tilematch_core::dataset::fetch::FetchConfig;
use tilematch_core::evaluation::{DEFAULT_MAX_AREA_SCALE, DEFAULT_RHO};
use tilematch_core::rng::derive_seed;
use tilematch_core::{Adjacency, DescriptorKind, EvalConfig, OrbParams, RansacConfig, SiftParams};

/// Every key the config file accepts. All optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub descriptor: Option<String>,
    pub descriptors: Option<String>,
    pub budget: Option<usize>,
    pub budgets: Option<String>,
    pub rho: Option<f64>,
    pub ransac_epsilon: Option<f64>,
    pub ransac_iters: Option<usize>,
    /// 0 disables the adaptive early exit.
    pub ransac_confidence: Option<f64>,
    /// 0 disables the model plausibility gate.
    pub ransac_max_area_scale: Option<f64>,
    pub sift_octaves: Option<usize>,
    pub sift_levels: Option<usize>,
    pub sift_sigma0: Option<f64>,
    pub sift_contrast: Option<f32>,
    pub orb_fast_threshold: Option<f32>,
    pub orb_harris_alpha: Option<f64>,
    pub orb_patch_size: Option<usize>,
    pub tile_size: Option<usize>,
    pub overlap: Option<f64>,
    pub base_size: Option<usize>,
    pub noise_sigma: Option<f64>,
    /// `four` (default) or `eight`; eight also labels diagonal neighbours positive.
    pub adjacency: Option<Adjacency>,
    pub fetch_base_url: Option<String>,
    pub fetch_api_key_env: Option<String>,
    pub fetch_zoom: Option<u32>,
    pub fetch_maptype: Option<String>,
    pub fetch_retries: Option<usize>,
    pub fetch_delay_ms: Option<u64>,
    pub fetch_concurrency: Option<usize>,
    pub origin_lat: Option<f64>,
    pub origin_lon: Option<f64>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} {p:?}: {e}")))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        bail!("empty {what} list");
    }
    Ok(items)
}

/// Pipeline settings shared by `detect`, `match` and `evaluate`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub descriptor: DescriptorKind,
    pub keypoint_budget: usize,
    pub eval: EvalConfig,
}

/// Flag values for the pipeline settings; `None` falls through to the file.
#[derive(Debug, Default, Clone)]
pub struct PipelineFlags {
    pub seed: Option<u64>,
    pub descriptor: Option<String>,
    pub budget: Option<usize>,
    pub rho: Option<f64>,
    pub ransac_epsilon: Option<f64>,
    pub ransac_iters: Option<usize>,
}

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_BUDGET: usize = 500;
pub const DEFAULT_BUDGETS: &str = "100,200,500,1000,2000";
pub const DEFAULT_DESCRIPTORS: &str = "sift,orb";

impl RunConfig {
    pub fn resolve(flags: &PipelineFlags, file: &FileConfig) -> Result<Self> {
        let seed = flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        let descriptor: DescriptorKind = flags
            .descriptor
            .as_deref()
            .or(file.descriptor.as_deref())
            .unwrap_or("sift")
            .parse()?;
        let keypoint_budget = flags.budget.or(file.budget).unwrap_or(DEFAULT_BUDGET);
        if keypoint_budget == 0 {
            bail!("budget must be positive");
        }

        let sd = SiftParams::default();
        let sift = SiftParams {
            octaves: file.sift_octaves.unwrap_or(sd.octaves),
            levels_per_octave: file.sift_levels.unwrap_or(sd.levels_per_octave),
            sigma0: file.sift_sigma0.unwrap_or(sd.sigma0),
            contrast_threshold: file.sift_contrast.unwrap_or(sd.contrast_threshold),
            ..sd
        };
        let od = OrbParams::default();
        let orb = OrbParams {
            fast_threshold: file.orb_fast_threshold.unwrap_or(od.fast_threshold),
            harris_alpha: file.orb_harris_alpha.unwrap_or(od.harris_alpha),
            patch_size: file.orb_patch_size.unwrap_or(od.patch_size),
            pattern_seed: derive_seed(seed, "brief-pattern"),
            ..od
        };
        let rd = RansacConfig::default();
        let confidence = match file.ransac_confidence {
            None => rd.confidence,
            Some(c) if c == 0.0 => None,
            Some(c) if c > 0.0 && c < 1.0 => Some(c),
            Some(c) => bail!("ransac_confidence {c} outside (0, 1)"),
        };
        let ransac = RansacConfig {
            epsilon: flags.ransac_epsilon.or(file.ransac_epsilon).unwrap_or(rd.epsilon),
            max_iters: flags.ransac_iters.or(file.ransac_iters).unwrap_or(rd.max_iters),
            seed: derive_seed(seed, "ransac"),
            confidence,
            max_area_scale: match file.ransac_max_area_scale {
                None => Some(DEFAULT_MAX_AREA_SCALE),
                Some(s) if s == 0.0 => None,
                Some(s) => Some(s),
            },
        };
        let eval = EvalConfig {
            sift,
            orb,
            ransac,
            rho: flags.rho.or(file.rho).unwrap_or(DEFAULT_RHO),
            seed,
        };
        eval.validate()?;
        Ok(Self {
            seed,
            descriptor,
            keypoint_budget,
            eval,
        })
    }
}

pub fn fetch_config(file: &FileConfig, tile_size: Option<usize>) -> FetchConfig {
    let d = FetchConfig::default();
    FetchConfig {
        base_url: file.fetch_base_url.clone().unwrap_or(d.base_url),
        api_key_env: file.fetch_api_key_env.clone().unwrap_or(d.api_key_env),
        zoom: file.fetch_zoom.unwrap_or(d.zoom),
        tile_size: tile_size.or(file.tile_size).unwrap_or(d.tile_size),
        maptype: file.fetch_maptype.clone().unwrap_or(d.maptype),
        retries: file.fetch_retries.unwrap_or(d.retries),
        delay_ms: file.fetch_delay_ms.unwrap_or(d.delay_ms),
        timeout_secs: d.timeout_secs,
        concurrency: file.fetch_concurrency.unwrap_or(d.concurrency),
        adjacency: file.adjacency.unwrap_or(d.adjacency),
    }
}
