//! Tile-grid datasets: manifests, adjacency ground truth, synthetic tiles
//! with planted translations, and (feature `fetch`) a static-map client.

#[cfg(feature = "fetch")]
pub mod fetch;
pub mod texture;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::image_core::{to_grayscale, Image};
use crate::rng::{derive_seed, XorShift64Star};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Fetched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub id: String,
    pub row: usize,
    pub col: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_lon: Option<f64>,
    /// Image path, relative to the manifest directory unless absolute.
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub source: Source,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub overlap_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoom: Option<u32>,
    pub tiles: Vec<TileRecord>,
}

impl TileManifest {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction < 1.0) {
            return Err(Error::Manifest(format!(
                "overlap_fraction {} outside (0, 1)",
                self.overlap_fraction
            )));
        }
        let mut cells = HashSet::new();
        let mut ids = HashSet::new();
        for t in &self.tiles {
            if t.row >= self.grid_rows || t.col >= self.grid_cols {
                return Err(Error::Manifest(format!(
                    "tile {} at ({}, {}) outside the {}x{} grid",
                    t.id, t.row, t.col, self.grid_rows, self.grid_cols
                )));
            }
            if !cells.insert((t.row, t.col)) {
                return Err(Error::Manifest(format!("grid cell ({}, {}) appears twice", t.row, t.col)));
            }
            if !ids.insert(t.id.as_str()) {
                return Err(Error::Manifest(format!("tile id {} appears twice", t.id)));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let m: TileManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn tile_path(&self, manifest_dir: &Path, tile: &TileRecord) -> PathBuf {
        if tile.path.is_absolute() {
            tile.path.clone()
        } else {
            manifest_dir.join(&tile.path)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub id_a: String,
    pub id_b: String,
    pub label: bool,
    /// Maps pixel coordinates of tile `id_a` into tile `id_b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_homography: Option<Homography>,
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<GroundTruthLabel>> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[GroundTruthLabel]) -> Result<()> {
    write_atomic(path.as_ref(), serde_json::to_string_pretty(labels)?.as_bytes())
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Which grid neighbours count as depicting the same location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjacency {
    /// Horizontal and vertical neighbours only.
    #[default]
    Four,
    /// Diagonal neighbours count too.
    Eight,
}

/// One label per unordered tile pair, `id_a < id_b` lexicographically,
/// sorted by `(id_a, id_b)`.
pub fn ground_truth_from_grid(manifest: &TileManifest, adjacency: Adjacency) -> Vec<GroundTruthLabel> {
    let mut tiles: Vec<&TileRecord> = manifest.tiles.iter().collect();
    tiles.sort_by(|a, b| a.id.cmp(&b.id));
    let mut labels = Vec::with_capacity(tiles.len() * tiles.len().saturating_sub(1) / 2);
    for (i, a) in tiles.iter().enumerate() {
        for b in &tiles[i + 1..] {
            let (dr, dc) = (a.row.abs_diff(b.row), a.col.abs_diff(b.col));
            let label = match adjacency {
                Adjacency::Four => dr + dc == 1,
                Adjacency::Eight => dr.max(dc) == 1,
            };
            labels.push(GroundTruthLabel {
                id_a: a.id.clone(),
                id_b: b.id.clone(),
                label,
                planted_homography: None,
            });
        }
    }
    labels
}

/// Grid id that sorts lexicographically in row-major order.
pub fn tile_id(row: usize, col: usize) -> String {
    format!("r{row:03}_c{col:03}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    /// Standard deviation of independent per-tile Gaussian noise on the
    /// `[0, 1]` scale. Zero keeps overlaps pixel-identical.
    pub noise_sigma: f64,
    pub seed: u64,
    pub adjacency: Adjacency,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            seed: 0,
            adjacency: Adjacency::Four,
        }
    }
}

pub fn stride(tile_size: usize, overlap_fraction: f64) -> usize {
    (tile_size as f64 * (1.0 - overlap_fraction)).round() as usize
}

/// Result of [`synthesize_tiles`].
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: TileManifest,
    pub labels: Vec<GroundTruthLabel>,
    pub manifest_path: PathBuf,
    pub labels_path: PathBuf,
}

/// Crops `base` on a regular grid with the given overlap and writes the
/// tiles, `manifest.json` and `labels.json` into `out_dir`.
pub fn synthesize_tiles(
    base: &Image,
    tile_size: usize,
    overlap_fraction: f64,
    out_dir: impl AsRef<Path>,
    options: &SynthOptions,
) -> Result<SyntheticDataset> {
    let (manifest, tiles, labels) = plan_tiles(base, tile_size, overlap_fraction, options)?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    for (record, img) in manifest.tiles.iter().zip(&tiles) {
        img.save(out_dir.join(&record.path))?;
    }
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let labels_path = out_dir.join(LABELS_FILE);
    manifest.save(&manifest_path)?;
    save_labels(&labels_path, &labels)?;
    Ok(SyntheticDataset {
        manifest,
        labels,
        manifest_path,
        labels_path,
    })
}

type TilePlan = (TileManifest, Vec<Image>, Vec<GroundTruthLabel>);

/// In-memory part of [`synthesize_tiles`]: manifest, quantized tile images and labels.
pub fn plan_tiles(base: &Image, tile_size: usize, overlap_fraction: f64, options: &SynthOptions) -> Result<TilePlan> {
    if !(overlap_fraction > 0.0 && overlap_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "overlap fraction {overlap_fraction} outside (0, 1)"
        )));
    }
    if tile_size == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    let base = to_grayscale(base)?;
    let step = stride(tile_size, overlap_fraction);
    if step == 0 {
        return Err(Error::InvalidArgument("overlap leaves a zero stride".into()));
    }
    let fits = |extent: usize| {
        if extent < tile_size {
            0
        } else {
            (extent - tile_size) / step + 1
        }
    };
    let (cols, rows) = (fits(base.width()), fits(base.height()));
    if rows < 2 || cols < 2 {
        return Err(Error::ImageTooSmall {
            width: base.width(),
            height: base.height(),
            reason: format!(
                "tiles of {tile_size} px at stride {step} need at least {} px per side for a 2x2 grid",
                tile_size + step
            ),
        });
    }

    let mut records = Vec::with_capacity(rows * cols);
    let mut images = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let id = tile_id(row, col);
            let mut tile = base.crop(col * step, row * step, tile_size, tile_size)?;
            if options.noise_sigma > 0.0 {
                let mut rng = XorShift64Star::new(derive_seed(options.seed, &format!("tile-noise/{id}")));
                for v in tile.data_mut() {
                    *v += (options.noise_sigma * rng.gaussian()) as f32;
                }
            }
            images.push(tile.quantized());
            records.push(TileRecord {
                path: PathBuf::from(format!("{id}.png")),
                id,
                row,
                col,
                center_lat: None,
                center_lon: None,
                width: tile_size,
                height: tile_size,
            });
        }
    }
    let manifest = TileManifest {
        source: Source::Synthetic,
        grid_rows: rows,
        grid_cols: cols,
        overlap_fraction,
        zoom: None,
        tiles: records,
    };
    let mut labels = ground_truth_from_grid(&manifest, options.adjacency);
    let by_id = |id: &str| {
        manifest
            .tiles
            .iter()
            .find(|t| t.id == id)
            .expect("label ids come from the manifest")
    };
    for label in labels.iter_mut().filter(|l| l.label) {
        let (a, b) = (by_id(&label.id_a), by_id(&label.id_b));
        let dx = (a.col as f64 - b.col as f64) * step as f64;
        let dy = (a.row as f64 - b.row as f64) * step as f64;
        label.planted_homography = Some(Homography::translation(dx, dy));
    }
    Ok((manifest, images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_manifest(rows: usize, cols: usize) -> TileManifest {
        let tiles = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(row, col)| TileRecord {
                id: tile_id(row, col),
                row,
                col,
                center_lat: None,
                center_lon: None,
                path: PathBuf::from(format!("{}.png", tile_id(row, col))),
                width: 8,
                height: 8,
            })
            .collect();
        TileManifest {
            source: Source::Synthetic,
            grid_rows: rows,
            grid_cols: cols,
            overlap_fraction: 0.5,
            zoom: None,
            tiles,
        }
    }

    #[test]
    fn grid_ground_truth() {
        let labels = ground_truth_from_grid(&grid_manifest(2, 2), Adjacency::Four);
        assert_eq!(labels.len(), 6);
        assert_eq!(labels.iter().filter(|l| l.label).count(), 4);

        let strip = ground_truth_from_grid(&grid_manifest(1, 3), Adjacency::Four);
        let flags: Vec<_> = strip.iter().map(|l| (l.id_a.as_str(), l.id_b.as_str(), l.label)).collect();
        assert_eq!(
            flags,
            vec![
                ("r000_c000", "r000_c001", true),
                ("r000_c000", "r000_c002", false),
                ("r000_c001", "r000_c002", true)
            ]
        );
        assert!(ground_truth_from_grid(&grid_manifest(1, 1), Adjacency::Four).is_empty());
        let eight = ground_truth_from_grid(&grid_manifest(2, 2), Adjacency::Eight);
        assert!(eight.iter().all(|l| l.label));
    }

    #[test]
    fn label_count_is_n_choose_2() {
        for (r, c) in [(3, 4), (5, 5), (1, 7)] {
            let n = r * c;
            assert_eq!(ground_truth_from_grid(&grid_manifest(r, c), Adjacency::Four).len(), n * (n - 1) / 2);
        }
    }

    #[test]
    fn manifest_validation() {
        let mut m = grid_manifest(2, 2);
        assert!(m.validate().is_ok());
        m.tiles[1].row = 0;
        m.tiles[1].col = 0;
        assert!(m.validate().is_err());
        let mut m = grid_manifest(2, 2);
        m.overlap_fraction = 1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let m = grid_manifest(2, 3);
        let text = serde_json::to_string(&m).unwrap();
        assert!(!text.contains("center_lat"));
        let back: TileManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn synthetic_grid_geometry() {
        assert_eq!(stride(256, 0.5), 128);
        let base = Image::filled(1024, 1024, 0.5);
        let (m, tiles, labels) = plan_tiles(&base, 256, 0.5, &SynthOptions::default()).unwrap();
        assert_eq!((m.grid_rows, m.grid_cols, tiles.len()), (7, 7, 49));
        assert_eq!(labels.len(), 49 * 48 / 2);
        let right = labels
            .iter()
            .find(|l| l.id_a == "r000_c000" && l.id_b == "r000_c001")
            .unwrap();
        assert_eq!(
            right.planted_homography.unwrap().to_row_major(),
            [1.0, 0.0, -128.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert!(labels
            .iter()
            .all(|l| l.label == l.planted_homography.is_some()));
        assert!(matches!(
            plan_tiles(&Image::filled(300, 300, 0.5), 256, 0.5, &SynthOptions::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn planted_translations_are_pixel_exact() {
        let base = texture::synthetic_base(160, 7);
        let (m, tiles, labels) = plan_tiles(&base, 64, 0.5, &SynthOptions::default()).unwrap();
        let index = |id: &str| m.tiles.iter().position(|t| t.id == id).unwrap();
        for l in labels.iter().filter(|l| l.label) {
            let h = l.planted_homography.unwrap().to_row_major();
            let (a, b) = (&tiles[index(&l.id_a)], &tiles[index(&l.id_b)]);
            let (tx, ty) = (h[2] as isize, h[5] as isize);
            let mut compared = 0;
            for y in 0..64isize {
                for x in 0..64isize {
                    let (u, v) = (x + tx, y + ty);
                    if (0..64).contains(&u) && (0..64).contains(&v) {
                        assert_eq!(a.get(x as usize, y as usize), b.get(u as usize, v as usize));
                        compared += 1;
                    }
                }
            }
            assert_eq!(compared, 64 * 32);
        }
    }

    #[test]
    fn synthesize_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested/out");
        let base = texture::synthetic_base(96, 1);
        let ds = synthesize_tiles(&base, 48, 0.5, &out, &SynthOptions::default()).unwrap();
        assert_eq!(ds.manifest.tiles.len(), 9);
        let loaded = TileManifest::load(&ds.manifest_path).unwrap();
        assert_eq!(loaded, ds.manifest);
        assert_eq!(load_labels(&ds.labels_path).unwrap(), ds.labels);
        let t = &loaded.tiles[4];
        let img = Image::load(loaded.tile_path(&out, t)).unwrap();
        assert_eq!((img.width(), img.height()), (48, 48));
    }
}
