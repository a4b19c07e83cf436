//! Pair verification scores and dataset-level summaries.
//!
//! A pair is scored by its inlier ratio: RANSAC inliers over brute-force
//! matches. Pairs at or above `rho` are predicted to overlap.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{GroundTruthLabel, TileManifest};
use crate::error::{Error, Result};
use crate::geometry::{ransac_homography, Correspondence, Point, RansacConfig, RansacResult};
use crate::image_core::{to_grayscale, Image};
use crate::matcher::{brute_force_match, DescriptorList, MatchSet};
use crate::orb::{orb_detect_ranked, OrbParams};
use crate::rng::derive_seed;
use crate::sift::{sift_detect_ranked, SiftParams};

pub const DEFAULT_RHO: f64 = 0.10;
/// Tiles share a zoom level, so a true overlap model barely changes area.
pub const DEFAULT_MAX_AREA_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    Sift,
    Orb,
}

impl DescriptorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DescriptorKind::Sift => "sift",
            DescriptorKind::Orb => "orb",
        }
    }
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sift" => Ok(DescriptorKind::Sift),
            "orb" => Ok(DescriptorKind::Orb),
            other => Err(Error::InvalidArgument(format!(
                "unknown descriptor {other:?} (expected sift or orb)"
            ))),
        }
    }
}

pub fn inlier_ratio(n_matches: usize, n_inliers: usize) -> Result<f64> {
    if n_inliers > n_matches {
        return Err(Error::InlierCount {
            matches: n_matches,
            inliers: n_inliers,
        });
    }
    if n_matches == 0 {
        return Ok(0.0);
    }
    Ok(n_inliers as f64 / n_matches as f64)
}

pub fn predict(ratio: f64, rho: f64) -> Result<bool> {
    check_rho(rho)?;
    Ok(ratio >= rho)
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("rho {rho} outside (0, 1)")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion_counts(reports: &[PairReport]) -> Confusion {
    let mut c = Confusion::default();
    for r in reports {
        match (r.ground_truth, r.predicted) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    c
}

/// One evaluated pair. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub descriptor: DescriptorKind,
    #[serde(rename = "budget")]
    pub keypoint_budget: usize,
    pub id_a: String,
    pub id_b: String,
    pub n_matches: usize,
    pub n_inliers: usize,
    pub inlier_ratio: f64,
    pub predicted: bool,
    pub ground_truth: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub sift: SiftParams,
    pub orb: OrbParams,
    /// Its `seed` is replaced by a per-pair seed derived from `seed` below.
    pub ransac: RansacConfig,
    pub rho: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sift: SiftParams::default(),
            orb: OrbParams::default(),
            ransac: RansacConfig {
                max_area_scale: Some(DEFAULT_MAX_AREA_SCALE),
                ..RansacConfig::default()
            },
            rho: DEFAULT_RHO,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        self.sift.validate()?;
        self.orb.validate()?;
        if !(self.ransac.epsilon > 0.0) || self.ransac.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "RANSAC needs a positive epsilon and iteration count".into(),
            ));
        }
        Ok(())
    }

    fn ransac_with_seed(&self, label: &str) -> RansacConfig {
        RansacConfig {
            seed: derive_seed(self.seed, label),
            ..self.ransac.clone()
        }
    }
}

/// Keypoint positions, scales and descriptors of one image, in rank order.
#[derive(Debug, Clone)]
pub struct Features {
    pub kind: DescriptorKind,
    pub points: Vec<Point>,
    /// Keypoint scale in pixels, for drawing.
    pub scales: Vec<f64>,
    pub descriptors: DescriptorList,
    ranks: Vec<usize>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The features a smaller budget would have produced.
    pub fn with_budget(&self, budget: usize) -> Features {
        let keep = self.ranks.partition_point(|&r| r < budget);
        let descriptors = match &self.descriptors {
            DescriptorList::Sift(v) => DescriptorList::Sift(v[..keep].to_vec()),
            DescriptorList::Brief(v) => DescriptorList::Brief(v[..keep].to_vec()),
        };
        Features {
            kind: self.kind,
            points: self.points[..keep].to_vec(),
            scales: self.scales[..keep].to_vec(),
            descriptors,
            ranks: self.ranks[..keep].to_vec(),
        }
    }
}

pub fn extract_features(img: &Image, kind: DescriptorKind, budget: usize, config: &EvalConfig) -> Result<Features> {
    if budget == 0 {
        return Err(Error::InvalidArgument("keypoint budget must be positive".into()));
    }
    Ok(match kind {
        DescriptorKind::Sift => {
            let feats = sift_detect_ranked(img, budget, &config.sift)?;
            Features {
                kind,
                points: feats.iter().map(|(_, k, _)| [k.x, k.y]).collect(),
                scales: feats.iter().map(|(_, k, _)| k.sigma).collect(),
                ranks: feats.iter().map(|(r, _, _)| *r).collect(),
                descriptors: DescriptorList::Sift(feats.into_iter().map(|(_, _, d)| d).collect()),
            }
        }
        DescriptorKind::Orb => {
            let feats = orb_detect_ranked(img, budget, &config.orb)?;
            let radius = config.orb.patch_size as f64 / 2.0;
            Features {
                kind,
                points: feats.iter().map(|(_, k, _)| [k.x as f64, k.y as f64]).collect(),
                scales: vec![radius; feats.len()],
                ranks: feats.iter().map(|(r, _, _)| *r).collect(),
                descriptors: DescriptorList::Brief(feats.into_iter().map(|(_, _, d)| d).collect()),
            }
        }
    })
}

/// Matching and verification outcome for one pair.
#[derive(Debug, Clone)]
pub struct PairEvaluation {
    pub matches: MatchSet,
    /// `None` when RANSAC found no consensus.
    pub ransac: Option<RansacResult>,
    pub n_matches: usize,
    pub n_inliers: usize,
    pub inlier_ratio: f64,
    pub predicted: bool,
    pub seed: u64,
}

/// Matches `a` (query side) against `b` and verifies with RANSAC.
pub fn evaluate_features(a: &Features, b: &Features, rho: f64, ransac: &RansacConfig) -> Result<PairEvaluation> {
    let metric = a.descriptors.metric();
    let matches = brute_force_match(&a.descriptors, &b.descriptors, metric)?;
    let corrs: Vec<Correspondence> = matches
        .matches
        .iter()
        .map(|m| Correspondence::new(a.points[m.index_a], b.points[m.index_b]))
        .collect();
    let ransac_result = match ransac_homography(&corrs, ransac) {
        Ok(r) => Some(r),
        Err(Error::NoConsensus(_)) => None,
        Err(e) => return Err(e),
    };
    let n_matches = matches.len();
    let n_inliers = ransac_result.as_ref().map_or(0, |r| r.inlier_indices.len());
    let ratio = inlier_ratio(n_matches, n_inliers)?;
    Ok(PairEvaluation {
        matches,
        ransac: ransac_result,
        n_matches,
        n_inliers,
        inlier_ratio: ratio,
        predicted: predict(ratio, rho)?,
        seed: ransac.seed,
    })
}

/// Full pipeline on two images. The report carries empty tile ids and
/// `ground_truth = false`; dataset runs fill those in.
pub fn evaluate_pair(
    img_a: &Image,
    img_b: &Image,
    kind: DescriptorKind,
    budget: usize,
    config: &EvalConfig,
) -> Result<PairReport> {
    config.validate()?;
    let fa = extract_features(img_a, kind, budget, config)?;
    let fb = extract_features(img_b, kind, budget, config)?;
    let ransac = config.ransac_with_seed(&format!("ransac/{kind}/{budget}"));
    let e = evaluate_features(&fa, &fb, config.rho, &ransac)?;
    Ok(PairReport {
        descriptor: kind,
        keypoint_budget: budget,
        id_a: String::new(),
        id_b: String::new(),
        n_matches: e.n_matches,
        n_inliers: e.n_inliers,
        inlier_ratio: e.inlier_ratio,
        predicted: e.predicted,
        ground_truth: false,
        seed: e.seed,
    })
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub descriptor: DescriptorKind,
    pub budget: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Mean inlier ratio over ground-truth-positive pairs; empty without any.
    pub tp_mean: Option<f64>,
    pub tn_mean: Option<f64>,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub rho: f64,
    pub rows: Vec<SummaryRow>,
}

impl EvaluationSummary {
    pub fn row(&self, kind: DescriptorKind, budget: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.descriptor == kind && r.budget == budget)
    }

    /// Plain-text table: one row per configuration, means as percentages.
    pub fn to_table(&self) -> String {
        let pct = |m: Option<f64>| m.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut out = format!(
            "{:<6} {:>9} {:>12} {:>12} {:>5} {:>5} {:>5} {:>5}\n",
            "Method", "Keypoints", "TP mean (%)", "TN mean (%)", "TP", "TN", "FP", "FN"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<6} {:>9} {:>12} {:>12} {:>5} {:>5} {:>5} {:>5}\n",
                r.descriptor.as_str().to_uppercase(),
                r.budget,
                pct(r.tp_mean),
                pct(r.tn_mean),
                r.tp,
                r.tn,
                r.fp,
                r.fn_
            ));
        }
        out.push_str(&format!("rho = {}\n", self.rho));
        out
    }
}

pub fn summarize(reports: &[PairReport], rho: f64) -> EvaluationSummary {
    let mut keys: Vec<(DescriptorKind, usize)> = reports.iter().map(|r| (r.descriptor, r.keypoint_budget)).collect();
    keys.sort();
    keys.dedup();
    let rows = keys
        .into_iter()
        .map(|(descriptor, budget)| {
            let group: Vec<PairReport> = reports
                .iter()
                .filter(|r| r.descriptor == descriptor && r.keypoint_budget == budget)
                .cloned()
                .collect();
            let mean = |gt: bool| {
                let v: Vec<f64> = group.iter().filter(|r| r.ground_truth == gt).map(|r| r.inlier_ratio).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            let c = confusion_counts(&group);
            SummaryRow {
                descriptor,
                budget,
                n_positive: group.iter().filter(|r| r.ground_truth).count(),
                n_negative: group.iter().filter(|r| !r.ground_truth).count(),
                tp_mean: mean(true),
                tn_mean: mean(false),
                tp: c.tp,
                tn: c.tn,
                fp: c.fp,
                fn_: c.fn_,
            }
        })
        .collect();
    EvaluationSummary { rho, rows }
}

#[derive(Debug, Clone)]
pub struct DatasetEvaluation {
    pub summary: EvaluationSummary,
    /// Sorted by (descriptor, budget, id_a, id_b), descriptors in `sift, orb` order.
    pub reports: Vec<PairReport>,
}

/// Loads the manifest's tiles and runs [`evaluate_tiles`].
pub fn evaluate_dataset(
    manifest: &TileManifest,
    manifest_dir: &Path,
    labels: &[GroundTruthLabel],
    kinds: &[DescriptorKind],
    budgets: &[usize],
    config: &EvalConfig,
) -> Result<DatasetEvaluation> {
    manifest.validate()?;
    let tiles = manifest
        .tiles
        .par_iter()
        .map(|t| {
            let img = to_grayscale(&Image::load(manifest.tile_path(manifest_dir, t))?)?;
            Ok((t.id.clone(), img))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_tiles(&tiles, labels, kinds, budgets, config)
}

/// Evaluates every unordered pair of `tiles` for every descriptor and
/// budget. The tile with the smaller id is the query side. Features are
/// extracted once per tile and descriptor at the largest budget and cut
/// down for the smaller ones.
pub fn evaluate_tiles(
    tiles: &[(String, Image)],
    labels: &[GroundTruthLabel],
    kinds: &[DescriptorKind],
    budgets: &[usize],
    config: &EvalConfig,
) -> Result<DatasetEvaluation> {
    config.validate()?;
    if tiles.len() < 2 {
        return Err(Error::Manifest(format!("need at least 2 tiles, got {}", tiles.len())));
    }
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let mut budgets = budgets.to_vec();
    budgets.sort();
    budgets.dedup();
    if kinds.is_empty() || budgets.is_empty() || budgets[0] == 0 {
        return Err(Error::InvalidArgument(
            "need at least one descriptor and positive budgets".into(),
        ));
    }
    let max_budget = *budgets.last().expect("non-empty");

    let truth: HashMap<(&str, &str), bool> = labels
        .iter()
        .map(|l| {
            let key = if l.id_a <= l.id_b {
                (l.id_a.as_str(), l.id_b.as_str())
            } else {
                (l.id_b.as_str(), l.id_a.as_str())
            };
            (key, l.label)
        })
        .collect();
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.sort_by(|&i, &j| tiles[i].0.cmp(&tiles[j].0));
    let mut pairs = Vec::new();
    for (p, &i) in order.iter().enumerate() {
        for &j in &order[p + 1..] {
            let key = (tiles[i].0.as_str(), tiles[j].0.as_str());
            if key.0 == key.1 {
                return Err(Error::Manifest(format!("duplicate tile id {}", key.0)));
            }
            let gt = *truth
                .get(&key)
                .ok_or_else(|| Error::Manifest(format!("no ground-truth label for {} / {}", key.0, key.1)))?;
            pairs.push((i, j, gt));
        }
    }

    let jobs: Vec<(usize, DescriptorKind)> = kinds
        .iter()
        .flat_map(|&k| (0..tiles.len()).map(move |t| (t, k)))
        .collect();
    let extracted = jobs
        .par_iter()
        .map(|&(t, k)| extract_features(&tiles[t].1, k, max_budget, config))
        .collect::<Result<Vec<_>>>()?;
    let features: HashMap<(usize, DescriptorKind), Features> = jobs.into_iter().zip(extracted).collect();

    let mut reports = Vec::with_capacity(kinds.len() * budgets.len() * pairs.len());
    for &kind in &kinds {
        for &budget in &budgets {
            let cut: Vec<Features> = (0..tiles.len())
                .map(|t| features[&(t, kind)].with_budget(budget))
                .collect();
            let batch = pairs
                .par_iter()
                .map(|&(i, j, gt)| {
                    let (id_a, id_b) = (&tiles[i].0, &tiles[j].0);
                    let ransac = config.ransac_with_seed(&format!("ransac/{kind}/{budget}/{id_a}/{id_b}"));
                    let e = evaluate_features(&cut[i], &cut[j], config.rho, &ransac)?;
                    Ok(PairReport {
                        descriptor: kind,
                        keypoint_budget: budget,
                        id_a: id_a.clone(),
                        id_b: id_b.clone(),
                        n_matches: e.n_matches,
                        n_inliers: e.n_inliers,
                        inlier_ratio: e.inlier_ratio,
                        predicted: e.predicted,
                        ground_truth: gt,
                        seed: e.seed,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            reports.extend(batch);
        }
    }
    reports.sort_by(|a, b| {
        (a.descriptor, a.keypoint_budget, &a.id_a, &a.id_b).cmp(&(b.descriptor, b.keypoint_budget, &b.id_a, &b.id_b))
    });
    Ok(DatasetEvaluation {
        summary: summarize(&reports, config.rho),
        reports,
    })
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("CSV encoding: {e}"))
}

pub const PAIR_CSV_HEADER: [&str; 10] = [
    "descriptor",
    "budget",
    "id_a",
    "id_b",
    "n_matches",
    "n_inliers",
    "inlier_ratio",
    "predicted",
    "ground_truth",
    "seed",
];

pub const SUMMARY_CSV_HEADER: [&str; 10] = [
    "descriptor", "budget", "n_positive", "n_negative", "tp_mean", "tn_mean", "tp", "tn", "fp", "fn",
];

pub fn pair_reports_csv(reports: &[PairReport]) -> Result<Vec<u8>> {
    to_csv(reports, &PAIR_CSV_HEADER)
}

pub fn summary_csv(summary: &EvaluationSummary) -> Result<Vec<u8>> {
    to_csv(&summary.rows, &SUMMARY_CSV_HEADER)
}

/// Writes `pairs.csv`, `summary.csv` and `summary.txt` into `dir`.
pub fn write_reports(dir: &Path, eval: &DatasetEvaluation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::dataset::write_atomic(&dir.join("pairs.csv"), &pair_reports_csv(&eval.reports)?)?;
    crate::dataset::write_atomic(&dir.join("summary.csv"), &summary_csv(&eval.summary)?)?;
    let mut table = Vec::new();
    table.write_all(eval.summary.to_table().as_bytes())?;
    crate::dataset::write_atomic(&dir.join("summary.txt"), &table)?;
    Ok(())
}
