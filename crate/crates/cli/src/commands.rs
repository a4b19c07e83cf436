use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;
use tilematch_core::dataset::fetch::{self, Region, PARTIAL_MANIFEST_FILE};
use tilematch_core::dataset::{texture, write_atomic, LABELS_FILE};
use tilematch_core::evaluation::{evaluate_features, extract_features, write_reports, Features};
use tilematch_core::rng::derive_seed;
use tilematch_core::viz::{render_matches, DrawnMatch, VizMode};
use tilematch_core::{
    evaluate_dataset, load_labels, orb, sift, synthesize_tiles, DescriptorKind, Error, Image, RansacConfig,
    SynthOptions, TileManifest,
};

use crate::config::{self, FileConfig, PipelineFlags, RunConfig};
use crate::{Cli, Command, PipelineArgs, VizArg};

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let flags = |p: &PipelineArgs| PipelineFlags {
        seed: cli.seed,
        descriptor: p.descriptor.clone(),
        budget: p.budget,
        rho: p.rho,
        ransac_epsilon: p.ransac_epsilon,
        ransac_iters: p.ransac_iters,
    };
    match &cli.command {
        Command::Detect { image, pipeline } => {
            let rc = RunConfig::resolve(&flags(pipeline), &file)?;
            cmd_detect(image, &rc, cli.out.as_deref())
        }
        Command::Match {
            image_a,
            image_b,
            pipeline,
            viz,
        } => {
            let rc = RunConfig::resolve(&flags(pipeline), &file)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("match.json"));
            cmd_match(image_a, image_b, &rc, &out, *viz)
        }
        Command::Evaluate {
            manifest,
            labels,
            descriptors,
            budgets,
            pipeline,
        } => {
            let rc = RunConfig::resolve(&flags(pipeline), &file)?;
            let kinds: Vec<DescriptorKind> = config::parse_list(
                descriptors
                    .as_deref()
                    .or(file.descriptors.as_deref())
                    .unwrap_or(config::DEFAULT_DESCRIPTORS),
                "descriptor",
            )?;
            let budgets: Vec<usize> = config::parse_list(
                budgets.as_deref().or(file.budgets.as_deref()).unwrap_or(config::DEFAULT_BUDGETS),
                "budget",
            )?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
            cmd_evaluate(manifest, labels.as_deref(), &kinds, &budgets, &rc, &out)
        }
        Command::Synth {
            base,
            base_size,
            tile_size,
            overlap,
            noise_sigma,
        } => {
            let seed = cli.seed.or(file.seed).unwrap_or(config::DEFAULT_SEED);
            let base_img = match base {
                Some(p) => Image::load(p)?,
                None => texture::synthetic_base(
                    base_size.or(file.base_size).unwrap_or(1024),
                    derive_seed(seed, "synthetic-base"),
                ),
            };
            let options = SynthOptions {
                noise_sigma: noise_sigma.or(file.noise_sigma).unwrap_or(0.0),
                seed: derive_seed(seed, "tile-noise"),
                adjacency: file.adjacency.unwrap_or_default(),
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
            let ds = synthesize_tiles(
                &base_img,
                tile_size.or(file.tile_size).unwrap_or(256),
                overlap.or(file.overlap).unwrap_or(0.5),
                &out,
                &options,
            )?;
            println!(
                "{} tiles ({}x{}) written to {}",
                ds.manifest.tiles.len(),
                ds.manifest.grid_rows,
                ds.manifest.grid_cols,
                ds.manifest_path.display()
            );
            Ok(())
        }
        Command::Fetch {
            origin_lat,
            origin_lon,
            rows,
            cols,
            overlap,
            tile_size,
            zoom,
            base_url,
        } => {
            let mut fc = config::fetch_config(&file, *tile_size);
            if let Some(z) = zoom {
                fc.zoom = *z;
            }
            if let Some(u) = base_url {
                fc.base_url = u.clone();
            }
            let key = fetch::resolve_api_key(&fc)?;
            let region = Region {
                origin_lat: origin_lat.or(file.origin_lat).ok_or_else(|| anyhow!("--origin-lat is required"))?,
                origin_lon: origin_lon.or(file.origin_lon).ok_or_else(|| anyhow!("--origin-lon is required"))?,
                rows: rows.or(file.rows).ok_or_else(|| anyhow!("--rows is required"))?,
                cols: cols.or(file.cols).ok_or_else(|| anyhow!("--cols is required"))?,
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("tiles"));
            match fetch::fetch_tiles(&fc, &key, &region, overlap.or(file.overlap).unwrap_or(0.5), &out) {
                Ok(m) => {
                    println!("{} tiles written to {}", m.tiles.len(), out.display());
                    Ok(())
                }
                Err(e @ Error::Fetch { .. }) => {
                    eprintln!(
                        "partial results kept in {}; listed in {}",
                        out.display(),
                        out.join(PARTIAL_MANIFEST_FILE).display()
                    );
                    Err(e.into())
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

fn cmd_detect(image: &Path, rc: &RunConfig, out: Option<&Path>) -> Result<()> {
    let img = Image::load(image)?;
    let mut lines = String::new();
    let count = match rc.descriptor {
        DescriptorKind::Sift => {
            let feats = sift::sift_detect_and_describe(&img, rc.keypoint_budget, &rc.eval.sift)?;
            for (kp, d) in &feats {
                let rec = json!({
                    "x": kp.x, "y": kp.y, "sigma": kp.sigma, "orientation": kp.orientation,
                    "response": kp.response, "descriptor": d,
                });
                lines.push_str(&rec.to_string());
                lines.push('\n');
            }
            feats.len()
        }
        DescriptorKind::Orb => {
            let feats = orb::orb_detect_and_describe(&img, rc.keypoint_budget, &rc.eval.orb)?;
            let sigma = rc.eval.orb.patch_size as f64 / 2.0;
            for (kp, d) in &feats {
                let rec = json!({
                    "x": kp.x, "y": kp.y, "sigma": sigma, "orientation": kp.orientation,
                    "response": kp.harris_score, "descriptor": d,
                });
                lines.push_str(&rec.to_string());
                lines.push('\n');
            }
            feats.len()
        }
    };
    let out = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            PathBuf::from(format!("{stem}.{}.jsonl", rc.descriptor))
        }
    };
    write_atomic(&out, lines.as_bytes())?;
    println!("{count} keypoints written to {}", out.display());
    Ok(())
}

fn drawn(fa: &Features, fb: &Features, m: &tilematch_core::Match, inlier: bool) -> DrawnMatch {
    DrawnMatch {
        a: fa.points[m.index_a],
        b: fb.points[m.index_b],
        scale_a: fa.scales[m.index_a],
        scale_b: fb.scales[m.index_b],
        inlier,
    }
}

fn cmd_match(a: &Path, b: &Path, rc: &RunConfig, out: &Path, viz: Option<VizArg>) -> Result<()> {
    let img_a = Image::load(a)?;
    let img_b = Image::load(b)?;
    let (kind, budget) = (rc.descriptor, rc.keypoint_budget);
    let fa = extract_features(&img_a, kind, budget, &rc.eval)?;
    let fb = extract_features(&img_b, kind, budget, &rc.eval)?;
    let ransac = RansacConfig {
        seed: derive_seed(rc.seed, &format!("ransac/{kind}/{budget}")),
        ..rc.eval.ransac.clone()
    };
    let e = evaluate_features(&fa, &fb, rc.eval.rho, &ransac)?;
    let inliers: Vec<usize> = e.ransac.as_ref().map(|r| r.inlier_indices.clone()).unwrap_or_default();
    let report = json!({
        "descriptor": kind,
        "budget": budget,
        "seed": rc.seed,
        "ransac_seed": e.seed,
        "n_keypoints_a": fa.len(),
        "n_keypoints_b": fb.len(),
        "n_matches": e.n_matches,
        "n_inliers": e.n_inliers,
        "inlier_ratio": e.inlier_ratio,
        "rho": rc.eval.rho,
        "predicted": e.predicted,
        "homography": e.ransac.as_ref().map(|r| r.homography),
        "inliers": inliers,
        "matches": e.matches,
    });
    write_atomic(out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    println!(
        "{} matches, {} inliers, inlier ratio {:.4} -> {}",
        e.n_matches,
        e.n_inliers,
        e.inlier_ratio,
        if e.predicted { "overlap" } else { "no overlap" }
    );

    if let Some(v) = viz {
        let mut is_inlier = vec![false; e.n_matches];
        for &i in &inliers {
            is_inlier[i] = true;
        }
        let lines: Vec<DrawnMatch> = e
            .matches
            .matches
            .iter()
            .zip(&is_inlier)
            .map(|(m, &inl)| drawn(&fa, &fb, m, inl))
            .collect();
        let modes: &[(VizMode, &str)] = match v {
            VizArg::Pre => &[(VizMode::Pre, "pre")],
            VizArg::Post => &[(VizMode::Post, "post")],
            VizArg::Both => &[(VizMode::Pre, "pre"), (VizMode::Post, "post")],
        };
        for &(mode, tag) in modes {
            let path = out.with_extension(format!("{tag}.png"));
            render_matches(&img_a, &img_b, &lines, mode)?.save(&path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_evaluate(
    manifest_path: &Path,
    labels: Option<&Path>,
    kinds: &[DescriptorKind],
    budgets: &[usize],
    rc: &RunConfig,
    out: &Path,
) -> Result<()> {
    let manifest = TileManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let labels_path = labels.map(Path::to_path_buf).unwrap_or_else(|| dir.join(LABELS_FILE));
    let labels = load_labels(&labels_path)?;
    let eval = evaluate_dataset(&manifest, dir, &labels, kinds, budgets, &rc.eval)
        .with_context(|| format!("evaluating {}", manifest_path.display()))?;
    if eval.reports.is_empty() {
        bail!("no pairs evaluated");
    }
    write_reports(out, &eval)?;
    print!("{}", eval.summary.to_table());
    println!(
        "{} pair reports written to {}",
        eval.reports.len(),
        out.join("pairs.csv").display()
    );
    Ok(())
}
