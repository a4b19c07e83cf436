//! Static-map tile client.
//!
//! Tile centres are laid out on a regular grid in Web-Mercator world pixels
//! at the requested zoom, so neighbouring tiles overlap by exactly
//! `overlap_fraction` of their side. Requests go out in row-major order with
//! a fixed delay, bounded retries and at most `concurrency` in flight. Files
//! already present with the expected size are skipped, so an aborted run can
//! be resumed by running it again.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ground_truth_from_grid, save_labels, stride, tile_id, write_atomic, Adjacency, Source, TileManifest, TileRecord, LABELS_FILE, MANIFEST_FILE};
use crate::error::{Error, Result};

pub const PARTIAL_MANIFEST_FILE: &str = "manifest.partial.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchConfig {
    pub base_url: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub zoom: u32,
    pub tile_size: usize,
    pub maptype: String,
    /// Extra attempts after the first failure.
    pub retries: usize,
    pub delay_ms: u64,
    pub timeout_secs: u64,
    pub concurrency: usize,
    /// Neighbourhood used for the labels written next to the manifest.
    pub adjacency: Adjacency,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            base_url: "https://maps.googleapis.com/maps/api/staticmap".into(),
            api_key_env: "TILEMATCH_MAPS_API_KEY".into(),
            zoom: 18,
            tile_size: 512,
            maptype: "satellite".into(),
            retries: 2,
            delay_ms: 200,
            timeout_secs: 30,
            concurrency: 1,
            adjacency: Adjacency::Four,
        }
    }
}

/// Grid placement: the centre of tile (0, 0) and the grid shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub rows: usize,
    pub cols: usize,
}

/// Reads the API key named by `config.api_key_env`.
pub fn resolve_api_key(config: &FetchConfig) -> Result<String> {
    match std::env::var(&config.api_key_env) {
        Ok(k) if !k.trim().is_empty() => Ok(k),
        _ => Err(Error::Config(format!(
            "API key missing: set the {} environment variable",
            config.api_key_env
        ))),
    }
}

fn world_size(zoom: u32) -> f64 {
    256.0 * 2f64.powi(zoom as i32)
}

fn to_world(lat: f64, lon: f64, zoom: u32) -> (f64, f64) {
    let scale = world_size(zoom);
    let s = lat.to_radians().sin();
    let x = (lon + 180.0) / 360.0 * scale;
    let y = (0.5 - ((1.0 + s) / (1.0 - s)).ln() / (4.0 * PI)) * scale;
    (x, y)
}

fn from_world(x: f64, y: f64, zoom: u32) -> (f64, f64) {
    let scale = world_size(zoom);
    let lon = x / scale * 360.0 - 180.0;
    let lat = (PI * (1.0 - 2.0 * y / scale)).sinh().atan().to_degrees();
    (lat, lon)
}

/// Centre (lat, lon) of grid cell `(row, col)`.
pub fn tile_center(region: &Region, config: &FetchConfig, overlap_fraction: f64, row: usize, col: usize) -> (f64, f64) {
    let step = stride(config.tile_size, overlap_fraction) as f64;
    let (x0, y0) = to_world(region.origin_lat, region.origin_lon, config.zoom);
    from_world(x0 + col as f64 * step, y0 + row as f64 * step, config.zoom)
}

fn existing_tile_ok(path: &Path, size: usize) -> bool {
    image::image_dimensions(path)
        .map(|(w, h)| w as usize == size && h as usize == size)
        .unwrap_or(false)
}

struct Job {
    record: TileRecord,
    target: PathBuf,
}

fn fetch_one(agent: &ureq::Agent, config: &FetchConfig, key: &str, job: &Job) -> std::result::Result<(), String> {
    let (lat, lon) = (job.record.center_lat.unwrap_or(0.0), job.record.center_lon.unwrap_or(0.0));
    let mut last_err = String::new();
    for attempt in 0..=config.retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(config.delay_ms));
        }
        let response = agent
            .get(&config.base_url)
            .query("center", format!("{lat:.7},{lon:.7}"))
            .query("zoom", config.zoom.to_string())
            .query("size", format!("{0}x{0}", config.tile_size))
            .query("maptype", &config.maptype)
            .query("format", "png")
            .query("key", key)
            .call();
        let bytes = match response {
            Ok(mut r) => match r.body_mut().read_to_vec() {
                Ok(b) => b,
                Err(e) => {
                    last_err = e.to_string();
                    continue;
                }
            },
            Err(e) => {
                last_err = e.to_string();
                continue;
            }
        };
        match image::load_from_memory(&bytes) {
            Ok(img) if img.width() as usize == config.tile_size && img.height() as usize == config.tile_size => {
                return write_atomic(&job.target, &bytes).map_err(|e| e.to_string());
            }
            Ok(img) => {
                last_err = format!(
                    "expected {0}x{0} image, got {1}x{2}",
                    config.tile_size,
                    img.width(),
                    img.height()
                );
            }
            Err(e) => last_err = format!("undecodable image: {e}"),
        }
    }
    Err(last_err)
}

/// Fetches every grid tile into `out_dir` and writes `manifest.json` and
/// `labels.json`. On failure, the tiles fetched so far stay on disk, a
/// `manifest.partial.json` lists them, and the error names the first failed
/// tile in row-major order.
pub fn fetch_tiles(
    config: &FetchConfig,
    api_key: &str,
    region: &Region,
    overlap_fraction: f64,
    out_dir: impl AsRef<Path>,
) -> Result<TileManifest> {
    if region.rows == 0 || region.cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid must be non-empty, got {}x{}",
            region.rows, region.cols
        )));
    }
    if !(overlap_fraction > 0.0 && overlap_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "overlap fraction {overlap_fraction} outside (0, 1)"
        )));
    }
    if api_key.trim().is_empty() {
        return Err(Error::Config("API key is empty".into()));
    }
    if config.tile_size == 0 || config.concurrency == 0 {
        return Err(Error::Config("tile_size and concurrency must be positive".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;

    let jobs: Vec<Job> = (0..region.rows)
        .flat_map(|r| (0..region.cols).map(move |c| (r, c)))
        .map(|(row, col)| {
            let id = tile_id(row, col);
            let (lat, lon) = tile_center(region, config, overlap_fraction, row, col);
            let path = PathBuf::from(format!("{id}.png"));
            Job {
                target: out_dir.join(&path),
                record: TileRecord {
                    id,
                    row,
                    col,
                    center_lat: Some(lat),
                    center_lon: Some(lon),
                    path,
                    width: config.tile_size,
                    height: config.tile_size,
                },
            }
        })
        .collect();

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
        .build()
        .into();
    let next = AtomicUsize::new(0);
    let failures: Mutex<Vec<(usize, String)>> = Mutex::new(Vec::new());
    let done: Vec<AtomicUsize> = jobs.iter().map(|_| AtomicUsize::new(0)).collect();
    let requests_sent = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..config.concurrency.min(jobs.len()) {
            scope.spawn(|| loop {
                if !failures.lock().expect("poisoned").is_empty() {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { return };
                if existing_tile_ok(&job.target, config.tile_size) {
                    done[i].store(1, Ordering::SeqCst);
                    continue;
                }
                if requests_sent.fetch_add(1, Ordering::SeqCst) > 0 {
                    std::thread::sleep(Duration::from_millis(config.delay_ms));
                }
                match fetch_one(&agent, config, api_key, job) {
                    Ok(()) => done[i].store(1, Ordering::SeqCst),
                    Err(e) => failures.lock().expect("poisoned").push((i, e)),
                }
            });
        }
    });

    let manifest = |tiles: Vec<TileRecord>| TileManifest {
        source: Source::Fetched,
        grid_rows: region.rows,
        grid_cols: region.cols,
        overlap_fraction,
        zoom: Some(config.zoom),
        tiles,
    };
    let completed: Vec<TileRecord> = jobs
        .iter()
        .zip(&done)
        .filter(|(_, d)| d.load(Ordering::SeqCst) == 1)
        .map(|(j, _)| j.record.clone())
        .collect();

    let mut failures = failures.into_inner().expect("poisoned");
    failures.sort_by_key(|(i, _)| *i);
    if let Some((i, message)) = failures.into_iter().next() {
        manifest(completed).save(out_dir.join(PARTIAL_MANIFEST_FILE))?;
        let rec = &jobs[i].record;
        return Err(Error::Fetch {
            row: rec.row,
            col: rec.col,
            message,
        });
    }

    let full = manifest(completed);
    full.save(out_dir.join(MANIFEST_FILE))?;
    save_labels(out_dir.join(LABELS_FILE), &ground_truth_from_grid(&full, config.adjacency))?;
    let partial = out_dir.join(PARTIAL_MANIFEST_FILE);
    if partial.exists() {
        fs::remove_file(partial)?;
    }
    Ok(full)
}
