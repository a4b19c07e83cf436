//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod support;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::Matrix3;
use tilematch_core::dataset::fetch::{fetch_tiles, resolve_api_key, tile_center, FetchConfig, Region, PARTIAL_MANIFEST_FILE};
use tilematch_core::dataset::texture::synthetic_base;
use tilematch_core::dataset::{MANIFEST_FILE, LABELS_FILE};
use tilematch_core::evaluation::{pair_reports_csv, summary_csv, write_reports};
use tilematch_core::geometry::{apply_homography, estimate_homography_dlt, ransac_homography};
use tilematch_core::image_core::gaussian_blur;
use tilematch_core::matcher::hamming_distance;
use tilematch_core::orb::{brief_describe, brief_pattern, fast_detect, orb_orientation, sampling_image, CIRCLE};
use tilematch_core::rng::XorShift64Star;
use tilematch_core::sift::{
    assign_orientation, build_scale_space, compute_descriptor, detect_extrema, difference_of_gaussians,
};
use tilematch_core::*;

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn noise(rng: &mut XorShift64Star, w: usize, h: usize, quantized: bool) -> Image {
    Image::from_fn(w, h, |_, _| {
        let v = rng.next_f64() as f32;
        if quantized {
            (v * 255.0).round() / 255.0
        } else {
            v
        }
    })
}

// ---------------------------------------------------------------- 1

fn descriptor_dimensions() -> Outcome {
    let img = synthetic_base(128, 3);
    let sift = sift::sift_detect_and_describe(&img, 50, &SiftParams::default()).map_err(|e| e.to_string())?;
    let orb = orb::orb_detect_and_describe(&img, 50, &OrbParams::default()).map_err(|e| e.to_string())?;
    if sift.is_empty() || orb.is_empty() {
        return Err(format!("no features: sift {}, orb {}", sift.len(), orb.len()));
    }
    let sift_ok = sift.iter().all(|(_, d)| d.len() == 128) && SiftParams::default().descriptor_len() == 128;
    let orb_ok = orb.iter().all(|(_, d)| d.len() == 256 && d.words().len() == 4);
    check(
        sift_ok && orb_ok,
        format!("sift {} x 128 floats, orb {} x 256 bits", sift.len(), orb.len()),
    )
}

// ---------------------------------------------------------------- 2

fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn blur_oracle(img: &Image, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / sum).collect();
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = img.get(reflect(x as isize + dx, w), reflect(y as isize + dy, h));
                    acc += taps[(dx + r) as usize] * taps[(dy + r) as usize] * f64::from(v);
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn extrema_oracle(dog: &sift::DogPyramid, thr: f32) -> BTreeSet<(usize, usize, usize, usize)> {
    let mut found = BTreeSet::new();
    for (o, levels) in dog.octaves.iter().enumerate() {
        let (w, h) = (levels[0].width(), levels[0].height());
        for j in 1..levels.len().saturating_sub(1) {
            for y in 1..h.saturating_sub(1) {
                for x in 1..w.saturating_sub(1) {
                    let v = levels[j].get(x, y);
                    if v.abs() <= thr {
                        continue;
                    }
                    let mut above = true;
                    let mut below = true;
                    for l in j - 1..=j + 1 {
                        for yy in y - 1..=y + 1 {
                            for xx in x - 1..=x + 1 {
                                if (l, yy, xx) == (j, y, x) {
                                    continue;
                                }
                                let n = levels[l].get(xx, yy);
                                above &= v > n;
                                below &= v < n;
                            }
                        }
                    }
                    if above || below {
                        found.insert((o, j, x, y));
                    }
                }
            }
        }
    }
    found
}

fn fast_oracle(img: &Image, t: f32, n: usize) -> BTreeSet<(usize, usize)> {
    let mut set = BTreeSet::new();
    for y in 3..img.height().saturating_sub(3) {
        for x in 3..img.width().saturating_sub(3) {
            let c = img.get(x, y);
            let ring: Vec<f32> = CIRCLE
                .iter()
                .map(|&(dx, dy)| img.get((x as isize + dx) as usize, (y as isize + dy) as usize))
                .collect();
            let run = |pred: &dyn Fn(f32) -> bool| (0..16).any(|s| (0..n).all(|k| pred(ring[(s + k) % 16])));
            if run(&|v| v > c + t) || run(&|v| v < c - t) {
                set.insert((x, y));
            }
        }
    }
    set
}

fn oracle_suites() -> Outcome {
    let mut rng = XorShift64Star::new(2024);
    const TRIALS: usize = 120;

    let mut worst_conv = 0f64;
    for _ in 0..TRIALS {
        let sigma = rng.uniform(0.5, 3.0);
        let r = (3.0 * sigma).ceil() as usize;
        let w = r + 1 + rng.below(40) as usize;
        let h = r + 1 + rng.below(40) as usize;
        let img = noise(&mut rng, w, h, false);
        let fast = gaussian_blur(&img, sigma).map_err(|e| e.to_string())?;
        let slow = blur_oracle(&img, sigma);
        for (a, b) in fast.data().iter().zip(&slow) {
            worst_conv = worst_conv.max((f64::from(*a) - b).abs());
        }
    }

    let mut dog_mismatch = 0;
    let mut dog_points = 0;
    for _ in 0..TRIALS {
        let size = 20 + rng.below(30) as usize;
        let h = size + rng.below(8) as usize;
        let quantized = rng.next_u64() & 1 == 0;
        let img = noise(&mut rng, size, h, quantized);
        let octaves = 1 + rng.below(2) as usize;
        let levels = 5 + rng.below(2) as usize;
        let ss = build_scale_space(&img, octaves, levels, 1.6).map_err(|e| e.to_string())?;
        let dog = difference_of_gaussians(&ss).map_err(|e| e.to_string())?;
        let thr = rng.uniform(0.0, 0.01) as f32;
        let got: BTreeSet<_> = detect_extrema(&dog, thr)
            .iter()
            .map(|k| {
                let s = (1usize << k.octave) as f64;
                (k.octave, k.level, (k.x / s) as usize, (k.y / s) as usize)
            })
            .collect();
        let want = extrema_oracle(&dog, thr);
        dog_points += want.len();
        if got != want {
            dog_mismatch += 1;
        }
    }

    let mut fast_mismatch = 0;
    for trial in 0..TRIALS {
        let (w, h) = (12 + rng.below(30) as usize, 12 + rng.below(30) as usize);
        let img = noise(&mut rng, w, h, trial % 2 == 0);
        let t = rng.uniform(0.02, 0.3) as f32;
        let n = 9 + rng.below(4) as usize;
        let got: BTreeSet<_> = fast_detect(&img, t, n)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|k| (k.x, k.y))
            .collect();
        if got != fast_oracle(&img, t, n) {
            fast_mismatch += 1;
        }
    }

    let mut hamming_mismatch = 0;
    for _ in 0..TRIALS {
        let bits = 1 + rng.below(512) as usize;
        let a: Vec<bool> = (0..bits).map(|_| rng.next_u64() & 1 == 1).collect();
        let b: Vec<bool> = (0..bits).map(|_| rng.next_u64() & 1 == 1).collect();
        let loop_count = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
        let d = hamming_distance(&BriefDescriptor::from_bits(&a), &BriefDescriptor::from_bits(&b))
            .map_err(|e| e.to_string())?;
        if d != loop_count {
            hamming_mismatch += 1;
        }
    }

    let mut match_mismatch = 0;
    let mut ties = 0;
    for trial in 0..TRIALS {
        let (na, nb) = (rng.below(25) as usize, 1 + rng.below(25) as usize);
        let (a, b, metric) = if trial % 2 == 0 {
            let mut gen = |n: usize| -> Vec<SiftDescriptor> {
                (0..n)
                    .map(|_| SiftDescriptor {
                        values: (0..6).map(|_| rng.below(3) as f32).collect(),
                    })
                    .collect()
            };
            (DescriptorList::Sift(gen(na)), DescriptorList::Sift(gen(nb)), Metric::Euclidean)
        } else {
            let mut gen = |n: usize| -> Vec<BriefDescriptor> {
                (0..n)
                    .map(|_| BriefDescriptor::from_bits(&(0..12).map(|_| rng.next_u64() & 1 == 1).collect::<Vec<_>>()))
                    .collect()
            };
            (DescriptorList::Brief(gen(na)), DescriptorList::Brief(gen(nb)), Metric::Hamming)
        };
        let dist = |i: usize, j: usize| -> f64 {
            match (&a, &b) {
                (DescriptorList::Sift(x), DescriptorList::Sift(y)) => x[i]
                    .values
                    .iter()
                    .zip(&y[j].values)
                    .map(|(p, q)| f64::from(p - q).powi(2))
                    .sum::<f64>()
                    .sqrt(),
                (DescriptorList::Brief(x), DescriptorList::Brief(y)) => {
                    (0..x[i].len()).filter(|&k| x[i].get(k) != y[j].get(k)).count() as f64
                }
                _ => unreachable!(),
            }
        };
        let got = brute_force_match(&a, &b, metric).map_err(|e| e.to_string())?;
        let mut want = Vec::new();
        for i in 0..na {
            let mut best = 0;
            for j in 1..nb {
                if dist(i, j) < dist(i, best) {
                    best = j;
                }
                if dist(i, j) == dist(i, best) && j != best {
                    ties += 1;
                }
            }
            want.push((i, best, dist(i, best)));
        }
        let got: Vec<_> = got.matches.iter().map(|m| (m.index_a, m.index_b, m.distance)).collect();
        if got != want {
            match_mismatch += 1;
        }
    }

    check(
        worst_conv <= 1e-6 && dog_mismatch == 0 && fast_mismatch == 0 && hamming_mismatch == 0 && match_mismatch == 0,
        format!(
            "{TRIALS} instances each; convolution max err {worst_conv:.2e}; DoG mismatches {dog_mismatch} \
             ({dog_points} extrema); FAST mismatches {fast_mismatch}; Hamming mismatches {hamming_mismatch}; \
             matcher mismatches {match_mismatch} ({ties} ties)"
        ),
    )
}

// ---------------------------------------------------------------- 3, 4

fn random_homography(rng: &mut XorShift64Star, strength: f64) -> Homography {
    let theta = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI) * strength;
    let s = (rng.uniform(-0.7, 0.7) * strength).exp();
    let shear = rng.uniform(-0.3, 0.3) * strength;
    let aniso = (rng.uniform(-0.2, 0.2) * strength).exp();
    let (c, sn) = (theta.cos(), theta.sin());
    let a = Matrix3::new(c, -sn, 0.0, sn, c, 0.0, 0.0, 0.0, 1.0)
        * Matrix3::new(s * aniso, shear, 0.0, 0.0, s / aniso, 0.0, 0.0, 0.0, 1.0);
    let mut m = a;
    m[(0, 2)] = rng.uniform(-100.0, 100.0);
    m[(1, 2)] = rng.uniform(-100.0, 100.0);
    m[(2, 0)] = rng.uniform(-5e-4, 5e-4) * strength;
    m[(2, 1)] = rng.uniform(-5e-4, 5e-4) * strength;
    Homography::new(m).expect("well-conditioned")
}

fn dlt_round_trip() -> Outcome {
    let mut rng = XorShift64Star::new(77);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let h = random_homography(&mut rng, 1.0);
        let n = 8 + rng.below(13) as usize;
        let corrs: Vec<Correspondence> = (0..n)
            .map(|_| {
                let p = [rng.uniform(0.0, 512.0), rng.uniform(0.0, 512.0)];
                Correspondence::new(p, apply_homography(&h, p).unwrap())
            })
            .collect();
        let est = estimate_homography_dlt(&corrs).map_err(|e| e.to_string())?;
        for (a, b) in est.to_row_major().iter().zip(h.to_row_major()) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst < 1e-6, format!("1000 homographies, max entrywise error {worst:.2e}"))
}

fn ransac_planted_model() -> Outcome {
    let mut rng = XorShift64Star::new(4242);
    let mut failures = Vec::new();
    let mut worst_grid = 0f64;
    for rep in 0..100u64 {
        let h = random_homography(&mut rng, 0.5);
        let mut corrs = Vec::new();
        let mut planted = BTreeSet::new();
        let mut kinds: Vec<bool> = (0..100).map(|i| i < 70).collect();
        for i in (1..kinds.len()).rev() {
            kinds.swap(i, rng.below(i as u64 + 1) as usize);
        }
        for (i, &inlier) in kinds.iter().enumerate() {
            let p = [rng.uniform(0.0, 500.0), rng.uniform(0.0, 500.0)];
            let mut q = apply_homography(&h, p).unwrap();
            if inlier {
                planted.insert(i);
            } else {
                let (r, a) = (rng.uniform(30.0, 150.0), rng.uniform(0.0, std::f64::consts::TAU));
                q = [q[0] + r * a.cos(), q[1] + r * a.sin()];
            }
            corrs.push(Correspondence::new(p, q));
        }
        let config = RansacConfig {
            epsilon: 3.0,
            seed: rep,
            ..RansacConfig::default()
        };
        let result = match ransac_homography(&corrs, &config) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("rep {rep}: {e}"));
                continue;
            }
        };
        let got: BTreeSet<usize> = result.inlier_indices.iter().copied().collect();
        let mut grid_err = 0f64;
        for gy in 0..10 {
            for gx in 0..10 {
                let p = [gx as f64 * 500.0 / 9.0, gy as f64 * 500.0 / 9.0];
                let (a, b) = (apply_homography(&h, p).unwrap(), apply_homography(&result.homography, p).unwrap());
                grid_err = grid_err.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        worst_grid = worst_grid.max(grid_err);
        if got != planted || grid_err > 0.5 {
            failures.push(format!("rep {rep}: {} inliers, grid error {grid_err:.3}", got.len()));
        }
    }
    check(
        failures.is_empty(),
        format!(
            "100 repetitions, {} failures, worst grid error {worst_grid:.2e} px{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- 5

const PATCH: usize = 65;

/// Rotates a square image by 90 degrees about its centre pixel.
fn rotate90(img: &Image) -> Image {
    let n = img.width();
    Image::from_fn(n, n, |x, y| img.get(y, n - 1 - x))
}

fn sift_at_center(img: &Image) -> Vec<SiftDescriptor> {
    let ss = build_scale_space(img, 1, 6, 1.6).unwrap();
    let c = (PATCH / 2) as f64;
    let kp = SiftKeypoint {
        x: c,
        y: c,
        sigma: ss.absolute_sigma(0, 1),
        orientation: 0.0,
        response: 0.0,
        octave: 0,
        level: 1,
    };
    assign_orientation(&kp, &ss)
        .unwrap()
        .iter()
        .filter_map(|k| compute_descriptor(k, &ss, 4, 8, 16).unwrap())
        .collect()
}

fn orb_at_center(img: &Image, pattern: &orb::BriefPattern) -> BriefDescriptor {
    let smoothed = sampling_image(img, 2.0).unwrap();
    let c = PATCH / 2;
    let orientation = orb_orientation(&smoothed, c, c, 31).unwrap();
    let kp = OrbKeypoint {
        x: c,
        y: c,
        harris_score: 0.0,
        orientation,
    };
    brief_describe(&smoothed, &kp, pattern).expect("pattern fits the patch")
}

fn min_pair_distance(a: &[SiftDescriptor], b: &[SiftDescriptor]) -> f64 {
    let mut best = f64::INFINITY;
    for x in a {
        for y in b {
            best = best.min(matcher::euclidean_distance(x, y).unwrap());
        }
    }
    best
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rotation_invariance() -> Outcome {
    let base = synthetic_base(1024, 5);
    let mut rng = XorShift64Star::new(55);
    let patches: Vec<Image> = (0..20)
        .map(|_| {
            let x = rng.below((1024 - PATCH) as u64) as usize;
            let y = rng.below((1024 - PATCH) as u64) as usize;
            base.crop(x, y, PATCH, PATCH).unwrap()
        })
        .collect();
    let rotated: Vec<Image> = patches.iter().map(rotate90).collect();

    let sift_orig: Vec<_> = patches.iter().map(sift_at_center).collect();
    let sift_rot: Vec<_> = rotated.iter().map(sift_at_center).collect();
    let mut sift_wins = 0;
    for i in 0..20 {
        let matched = min_pair_distance(&sift_orig[i], &sift_rot[i]);
        let unrelated = median((0..20).filter(|&j| j != i).map(|j| min_pair_distance(&sift_orig[i], &sift_rot[j])).collect());
        if matched < unrelated {
            sift_wins += 1;
        }
    }

    let pattern = brief_pattern(OrbParams::default().pattern_seed, 31, 256).unwrap();
    let orb_orig: Vec<_> = patches.iter().map(|p| orb_at_center(p, &pattern)).collect();
    let orb_rot: Vec<_> = rotated.iter().map(|p| orb_at_center(p, &pattern)).collect();
    let matched: Vec<u32> = (0..20).map(|i| hamming_distance(&orb_orig[i], &orb_rot[i]).unwrap()).collect();
    let mut unrelated = Vec::new();
    for i in 0..20 {
        for j in 0..20 {
            if i != j {
                unrelated.push(f64::from(hamming_distance(&orb_orig[i], &orb_rot[j]).unwrap()));
            }
        }
    }
    let orb_median = median(unrelated);
    let orb_worst = *matched.iter().max().unwrap();
    check(
        sift_wins >= 19 && orb_worst < 64 && orb_median >= 100.0,
        format!(
            "SIFT matched below unrelated median in {sift_wins}/20; ORB worst matched Hamming {orb_worst}, \
             unrelated median {orb_median}"
        ),
    )
}

// ---------------------------------------------------------------- 6, 7

const BENCH_SEED: u64 = 42;
const BENCH_BUDGETS: [usize; 4] = [100, 200, 500, 1000];

struct BenchRuns {
    summary: EvaluationSummary,
    csv_pairs: [Vec<u8>; 2],
    csv_summary: [Vec<u8>; 2],
    files_equal: bool,
    seconds_per_run: f64,
    seconds_total: f64,
}

fn run_benchmark() -> std::result::Result<BenchRuns, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("tiles");
    let ds = synthesize_tiles(&synthetic_base(1024, BENCH_SEED), 256, 0.5, &data, &SynthOptions::default())
        .map_err(|e| e.to_string())?;
    if ds.manifest.tiles.len() != 49 {
        return Err(format!("expected 49 tiles, got {}", ds.manifest.tiles.len()));
    }
    let labels = load_labels(data.join(LABELS_FILE)).map_err(|e| e.to_string())?;
    let manifest = TileManifest::load(data.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let config = EvalConfig {
        seed: BENCH_SEED,
        ..EvalConfig::default()
    };
    let kinds = [DescriptorKind::Sift, DescriptorKind::Orb];
    let mut runs = Vec::new();
    let start = Instant::now();
    for k in 0..2 {
        let eval = evaluate_dataset(&manifest, &data, &labels, &kinds, &BENCH_BUDGETS, &config).map_err(|e| e.to_string())?;
        write_reports(&dir.path().join(format!("run{k}")), &eval).map_err(|e| e.to_string())?;
        runs.push(eval);
    }
    let seconds_total = start.elapsed().as_secs_f64();
    let seconds_per_run = seconds_total / 2.0;
    let read = |k: usize, f: &str| std::fs::read(dir.path().join(format!("run{k}")).join(f)).unwrap();
    let files_equal = ["pairs.csv", "summary.csv", "summary.txt"].iter().all(|f| read(0, f) == read(1, f));
    Ok(BenchRuns {
        summary: runs[0].summary.clone(),
        csv_pairs: [pair_reports_csv(&runs[0].reports).unwrap(), pair_reports_csv(&runs[1].reports).unwrap()],
        csv_summary: [summary_csv(&runs[0].summary).unwrap(), summary_csv(&runs[1].summary).unwrap()],
        files_equal,
        seconds_per_run,
        seconds_total,
    })
}

fn trend_reproduction(runs: &BenchRuns) -> Outcome {
    let s = &runs.summary;
    let row = |k, b| s.row(k, b).expect("row present");
    let tp = |k, b| row(k, b).tp_mean.unwrap_or(0.0);
    let tn = |k, b| row(k, b).tn_mean.unwrap_or(1.0);
    let mut problems = Vec::new();
    for &b in &BENCH_BUDGETS {
        if !(tp(DescriptorKind::Sift, b) > tp(DescriptorKind::Orb, b)) {
            problems.push(format!("(a) budget {b}: SIFT TP not above ORB"));
        }
        for k in [DescriptorKind::Sift, DescriptorKind::Orb] {
            if !(tn(k, b) < 0.05) {
                problems.push(format!("(c) {k} {b}: TN mean {:.2}%", 100.0 * tn(k, b)));
            }
            if !(tp(k, b) > 0.15) {
                problems.push(format!("(c) {k} {b}: TP mean {:.2}%", 100.0 * tp(k, b)));
            }
        }
    }
    for k in [DescriptorKind::Sift, DescriptorKind::Orb] {
        for w in BENCH_BUDGETS.windows(2) {
            if tp(k, w[1]) < tp(k, w[0]) - 0.01 {
                problems.push(format!("(b) {k}: TP drops from budget {} to {}", w[0], w[1]));
            }
        }
    }
    let cells: Vec<String> = BENCH_BUDGETS
        .iter()
        .map(|&b| {
            format!(
                "{b}: sift {:.1}/{:.1} orb {:.1}/{:.1}",
                100.0 * tp(DescriptorKind::Sift, b),
                100.0 * tn(DescriptorKind::Sift, b),
                100.0 * tp(DescriptorKind::Orb, b),
                100.0 * tn(DescriptorKind::Orb, b)
            )
        })
        .collect();
    let mut detail = format!(
        "TP/TN mean % [{}]; {:.0} s per run",
        cells.join("; "),
        runs.seconds_per_run
    );
    if !problems.is_empty() {
        detail.push_str(&format!("; {}", problems.join("; ")));
    }
    check(problems.is_empty() && runs.seconds_per_run < 600.0, detail)
}

fn determinism(runs: &BenchRuns) -> Outcome {
    let same = runs.csv_pairs[0] == runs.csv_pairs[1] && runs.csv_summary[0] == runs.csv_summary[1] && runs.files_equal;
    check(
        same && runs.seconds_total < 1200.0,
        format!(
            "pairs.csv {} bytes, summary.csv {} bytes, identical across two runs: {same}; {:.0} s for both",
            runs.csv_pairs[0].len(),
            runs.csv_summary[0].len(),
            runs.seconds_total
        ),
    )
}

// ---------------------------------------------------------------- 8

fn fetch_mock_server() -> Outcome {
    const KEY: &str = "test-key-5f1c";
    let region = Region {
        origin_lat: 47.3769,
        origin_lon: 8.5417,
        rows: 2,
        cols: 2,
    };
    let mut config = FetchConfig {
        tile_size: 64,
        zoom: 17,
        retries: 1,
        delay_ms: 0,
        timeout_secs: 5,
        ..FetchConfig::default()
    };
    let (lat, lon) = tile_center(&region, &config, 0.5, 1, 0);
    let bad_center = format!("{lat:.7},{lon:.7}");
    let mut notes = Vec::new();

    // success
    let server = support::MockServer::start(Box::new(|_| (200, support::png_bytes(64, 10))));
    config.base_url = server.base_url.clone();
    let dir = tempfile::tempdir().unwrap();
    let manifest = fetch_tiles(&config, KEY, &region, 0.5, dir.path()).map_err(|e| format!("success path: {e}"))?;
    let manifest_text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let files = manifest.tiles.iter().filter(|t| dir.path().join(&t.path).exists()).count();
    let keyed = server.requests().iter().all(|r| support::query_param(r, "key").as_deref() == Some(KEY));
    if files != 4 || server.requests().len() != 4 || manifest_text.contains(KEY) || !keyed {
        return Err(format!(
            "success path: {files} files, {} requests, key leaked {}",
            server.requests().len(),
            manifest_text.contains(KEY)
        ));
    }
    notes.push("success 4/4 tiles".to_string());

    // failure on tile (1, 0)
    let bad = bad_center.clone();
    let failing = support::MockServer::start(Box::new(move |target| {
        if support::query_param(target, "center").as_deref() == Some(bad.as_str()) {
            (500, b"upstream error".to_vec())
        } else {
            (200, support::png_bytes(64, 20))
        }
    }));
    config.base_url = failing.base_url.clone();
    let dir = tempfile::tempdir().unwrap();
    match fetch_tiles(&config, KEY, &region, 0.5, dir.path()) {
        Err(Error::Fetch { row: 1, col: 0, .. }) => {}
        other => return Err(format!("failure path: expected error at (1, 0), got {other:?}")),
    }
    let partial = TileManifest::load(dir.path().join(PARTIAL_MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let kept: Vec<_> = partial.tiles.iter().map(|t| (t.row, t.col)).collect();
    if kept != [(0, 0), (0, 1)] || dir.path().join(MANIFEST_FILE).exists() {
        return Err(format!("failure path: checkpoint lists {kept:?}"));
    }
    let attempts = failing
        .requests()
        .iter()
        .filter(|r| support::query_param(r, "center").as_deref() == Some(bad_center.as_str()))
        .count();
    notes.push(format!("failure names (1, 0) after {attempts} attempts, kept {}", kept.len()));

    // resume
    let healthy = support::MockServer::start(Box::new(|_| (200, support::png_bytes(64, 30))));
    config.base_url = healthy.base_url.clone();
    let resumed = fetch_tiles(&config, KEY, &region, 0.5, dir.path()).map_err(|e| format!("resume path: {e}"))?;
    let refetched = healthy.requests().len();
    if resumed.tiles.len() != 4 || refetched != 2 || dir.path().join(PARTIAL_MANIFEST_FILE).exists() {
        return Err(format!("resume path: {} tiles, {refetched} requests", resumed.tiles.len()));
    }
    notes.push(format!("resume fetched {refetched} missing tiles"));

    // preconditions checked before any request
    let silent = support::MockServer::start(Box::new(|_| (200, support::png_bytes(64, 40))));
    config.base_url = silent.base_url.clone();
    let empty = Region { rows: 0, ..region };
    let rejected = fetch_tiles(&config, KEY, &empty, 0.5, tempfile::tempdir().unwrap().path()).is_err();
    let missing_key = resolve_api_key(&FetchConfig {
        api_key_env: "TILEMATCH_ACCEPTANCE_UNSET_KEY".into(),
        ..FetchConfig::default()
    });
    if !rejected || !silent.requests().is_empty() || !matches!(missing_key, Err(Error::Config(_))) {
        return Err("empty grid or missing key not rejected up front".into());
    }
    notes.push("empty grid and missing key rejected".into());
    Ok(notes.join(", "))
}

// ----------------------------------------------------------------

fn run(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("criterion {id} {name}: PASS ({d}; {secs:.1} s)"),
        Err(d) => println!("criterion {id} {name}: FAIL ({d}; {secs:.1} s)"),
    }
    outcome.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= run(1, "descriptor dimensionality", descriptor_dimensions);
    ok &= run(2, "oracle equivalence", oracle_suites);
    ok &= run(3, "DLT round trip", dlt_round_trip);
    ok &= run(4, "RANSAC planted model", ransac_planted_model);
    ok &= run(5, "rotation invariance", rotation_invariance);
    let mut bench = Err("benchmark did not run".to_string());
    ok &= run(6, "trend reproduction", || {
        bench = run_benchmark();
        trend_reproduction(bench.as_ref().map_err(Clone::clone)?)
    });
    ok &= run(7, "determinism", || determinism(bench.as_ref().map_err(Clone::clone)?));
    ok &= run(8, "fetch client against mock server", fetch_mock_server);
    if !ok {
        std::process::exit(1);
    }
}
