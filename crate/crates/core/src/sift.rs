//! SIFT detection and description.
//!
//! Gaussian scale space, difference-of-Gaussians pyramid, plain 26-neighbour
//! scale-space extrema (no subpixel fit, no edge test), histogram-peak
//! orientation assignment and the M×M×B gradient-histogram descriptor.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_core::{downsample_half, gaussian_blur, to_grayscale, Image};

const ORIENTATION_BINS: usize = 36;

/// Tunable parameters for [`sift_detect_and_describe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftParams {
    pub octaves: usize,
    pub levels_per_octave: usize,
    pub sigma0: f64,
    pub contrast_threshold: f32,
    /// Subregions per side (M).
    pub grid: usize,
    /// Orientation bins per subregion (B).
    pub bins: usize,
    /// Patch side in octave pixels (S).
    pub patch_size: usize,
    /// Secondary orientation peaks at or above this fraction of the maximum
    /// spawn additional keypoints.
    pub peak_ratio: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self {
            octaves: 4,
            levels_per_octave: 6,
            sigma0: 1.6,
            contrast_threshold: 0.03,
            grid: 4,
            bins: 8,
            patch_size: 16,
            peak_ratio: 0.8,
        }
    }
}

impl SiftParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.octaves < 1 {
            return bad("sift octaves must be >= 1");
        }
        if self.levels_per_octave < 4 {
            // three DoG levels are the minimum for a 26-neighbour test
            return bad("sift levels_per_octave must be >= 4");
        }
        if !(self.sigma0 > 0.0) {
            return bad("sift sigma0 must be positive");
        }
        if self.contrast_threshold < 0.0 {
            return bad("sift contrast_threshold must be >= 0");
        }
        if self.grid == 0 || self.bins == 0 || self.patch_size == 0 {
            return bad("sift grid, bins and patch_size must be positive");
        }
        if self.patch_size % self.grid != 0 {
            return bad("sift patch_size must be divisible by grid");
        }
        if !(self.peak_ratio > 0.0 && self.peak_ratio <= 1.0) {
            return bad("sift peak_ratio must be in (0, 1]");
        }
        Ok(())
    }

    pub fn descriptor_len(&self) -> usize {
        self.grid * self.grid * self.bins
    }
}

/// Inter-level scale factor: `2^(1/(levels - 3))`, so that the level three
/// from the top of an octave sits at twice the base scale. Pyramids with
/// three or fewer levels use `sqrt(2)`.
pub fn scale_factor(levels_per_octave: usize) -> f64 {
    if levels_per_octave > 3 {
        2f64.powf(1.0 / (levels_per_octave - 3) as f64)
    } else {
        std::f64::consts::SQRT_2
    }
}

/// Gaussian scale space: `octaves[o][j]` is blurred to absolute scale
/// `sigma0 * k^j * 2^o`.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub octaves: Vec<Vec<Image>>,
    /// Octave-relative scale of each level, `sigma0 * k^j`.
    pub sigmas: Vec<f64>,
    pub k: f64,
    pub sigma0: f64,
}

impl ScaleSpace {
    /// Absolute scale of level `level` in octave `octave`.
    pub fn absolute_sigma(&self, octave: usize, level: usize) -> f64 {
        self.sigmas[level] * (1u64 << octave) as f64
    }
}

pub fn build_scale_space(
    img: &Image,
    octaves: usize,
    levels_per_octave: usize,
    sigma0: f64,
) -> Result<ScaleSpace> {
    let img = to_grayscale(img)?;
    if octaves < 1 || levels_per_octave < 2 || !(sigma0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid scale space shape: octaves {octaves}, levels {levels_per_octave}, sigma0 {sigma0}"
        )));
    }
    let min_side = 1usize << octaves;
    if img.width() < min_side || img.height() < min_side {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            reason: format!("{octaves} octaves need at least {min_side} pixels per side"),
        });
    }
    let k = scale_factor(levels_per_octave);
    let sigmas: Vec<f64> = (0..levels_per_octave)
        .map(|j| sigma0 * k.powi(j as i32))
        .collect();
    // The next octave starts from the last level at or below 2*sigma0.
    let seed_level = sigmas
        .iter()
        .rposition(|&s| s <= 2.0 * sigma0 * (1.0 + 1e-12))
        .unwrap_or(0);

    let mut pyramid = Vec::with_capacity(octaves);
    let mut base = gaussian_blur(&img, sigma0)?;
    for o in 0..octaves {
        let mut levels = Vec::with_capacity(levels_per_octave);
        levels.push(base);
        for j in 1..levels_per_octave {
            let inc = (sigmas[j].powi(2) - sigmas[j - 1].powi(2)).sqrt();
            let next = gaussian_blur(&levels[j - 1], inc)?;
            levels.push(next);
        }
        if o + 1 < octaves {
            let half = downsample_half(&levels[seed_level])?;
            let carried = sigmas[seed_level] / 2.0;
            base = if carried < sigma0 * (1.0 - 1e-12) {
                gaussian_blur(&half, (sigma0.powi(2) - carried.powi(2)).sqrt())?
            } else {
                half
            };
        } else {
            base = Image::filled(1, 1, 0.0);
        }
        pyramid.push(levels);
    }
    Ok(ScaleSpace {
        octaves: pyramid,
        sigmas,
        k,
        sigma0,
    })
}

/// Differences of adjacent scale-space levels.
#[derive(Debug, Clone)]
pub struct DogPyramid {
    /// `octaves[o][j] = L[o][j + 1] - L[o][j]`.
    pub octaves: Vec<Vec<Image>>,
    /// Octave-relative scale associated with DoG level `j` (that of `L[j]`).
    pub sigmas: Vec<f64>,
}

pub fn difference_of_gaussians(ss: &ScaleSpace) -> Result<DogPyramid> {
    let mut octaves = Vec::with_capacity(ss.octaves.len());
    for levels in &ss.octaves {
        if levels.len() < 2 {
            return Err(Error::InvalidArgument(
                "difference of Gaussians needs >= 2 levels per octave".into(),
            ));
        }
        let dogs = levels
            .windows(2)
            .map(|pair| {
                let data = pair[1]
                    .data()
                    .iter()
                    .zip(pair[0].data())
                    .map(|(&hi, &lo)| hi - lo)
                    .collect();
                Image::from_vec(pair[0].width(), pair[0].height(), 1, data)
            })
            .collect::<Result<Vec<_>>>()?;
        octaves.push(dogs);
    }
    Ok(DogPyramid {
        octaves,
        sigmas: ss.sigmas[..ss.sigmas.len() - 1].to_vec(),
    })
}

/// A scale-space extremum, optionally carrying an assigned orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftKeypoint {
    /// Column in the original image frame.
    pub x: f64,
    /// Row in the original image frame.
    pub y: f64,
    /// Absolute scale.
    pub sigma: f64,
    /// Radians in `[0, 2 pi)`.
    pub orientation: f64,
    /// `|D|` at the extremum.
    pub response: f32,
    pub octave: usize,
    pub level: usize,
}

impl SiftKeypoint {
    fn octave_coords(&self) -> (f64, f64) {
        let scale = (1u64 << self.octave) as f64;
        (self.x / scale, self.y / scale)
    }
}

/// Pixels strictly above or strictly below all 26 scale-space neighbours,
/// with `|D| > contrast_threshold`. Border pixels and the first and last DoG
/// level of each octave are never reported.
pub fn detect_extrema(dog: &DogPyramid, contrast_threshold: f32) -> Vec<SiftKeypoint> {
    let mut out = Vec::new();
    for (o, levels) in dog.octaves.iter().enumerate() {
        if levels.len() < 3 {
            continue;
        }
        let scale = (1u64 << o) as f64;
        let (w, h) = (levels[0].width(), levels[0].height());
        if w < 3 || h < 3 {
            continue;
        }
        for j in 1..levels.len() - 1 {
            let (below, cur, above) = (levels[j - 1].data(), levels[j].data(), levels[j + 1].data());
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let idx = y * w + x;
                    let v = cur[idx];
                    if v.abs() <= contrast_threshold {
                        continue;
                    }
                    if is_strict_extremum(v, idx, w, below, cur, above) {
                        out.push(SiftKeypoint {
                            x: x as f64 * scale,
                            y: y as f64 * scale,
                            sigma: dog.sigmas[j] * scale,
                            orientation: 0.0,
                            response: v.abs(),
                            octave: o,
                            level: j,
                        });
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn is_strict_extremum(v: f32, idx: usize, w: usize, below: &[f32], cur: &[f32], above: &[f32]) -> bool {
    let neighbours = [
        idx - w - 1,
        idx - w,
        idx - w + 1,
        idx - 1,
        idx + 1,
        idx + w - 1,
        idx + w,
        idx + w + 1,
    ];
    let center_ok = |cmp: &dyn Fn(f32) -> bool| {
        neighbours.iter().all(|&n| cmp(cur[n]))
            && cmp(below[idx])
            && cmp(above[idx])
            && neighbours.iter().all(|&n| cmp(below[n]) && cmp(above[n]))
    };
    if v > cur[idx - 1] {
        center_ok(&|n| v > n)
    } else {
        center_ok(&|n| v < n)
    }
}

/// Central-difference derivatives of one scale-space level.
#[derive(Debug, Clone)]
pub(crate) struct LevelDerivatives {
    width: usize,
    height: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl LevelDerivatives {
    pub(crate) fn new(level: &Image) -> Self {
        let (w, h) = (level.width(), level.height());
        let mut dx = vec![0f32; w * h];
        let mut dy = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (x as isize, y as isize);
                dx[y * w + x] = (level.get_reflect(xi + 1, yi) - level.get_reflect(xi - 1, yi)) * 0.5;
                dy[y * w + x] = (level.get_reflect(xi, yi + 1) - level.get_reflect(xi, yi - 1)) * 0.5;
            }
        }
        Self {
            width: w,
            height: h,
            dx,
            dy,
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (f64::from(self.dx[i]), f64::from(self.dy[i]))
    }

    /// Bilinearly interpolated derivative; `None` outside the pixel grid.
    #[inline]
    fn sample(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            return None;
        }
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (a, b, c, d) = (
            self.at(x0, y0),
            self.at(x0 + 1, y0),
            self.at(x0, y0 + 1),
            self.at(x0 + 1, y0 + 1),
        );
        let lerp = |p: f64, q: f64, t: f64| p + (q - p) * t;
        Some((
            lerp(lerp(a.0, b.0, fx), lerp(c.0, d.0, fx), fy),
            lerp(lerp(a.1, b.1, fx), lerp(c.1, d.1, fx), fy),
        ))
    }
}

/// Derivatives for every level of every octave.
pub(crate) struct DerivativePyramid {
    levels: Vec<Vec<LevelDerivatives>>,
}

impl DerivativePyramid {
    pub(crate) fn new(ss: &ScaleSpace) -> Self {
        Self {
            levels: ss
                .octaves
                .iter()
                .map(|o| o.iter().map(LevelDerivatives::new).collect())
                .collect(),
        }
    }

    fn get(&self, kp: &SiftKeypoint) -> Option<&LevelDerivatives> {
        self.levels.get(kp.octave)?.get(kp.level)
    }
}

/// 36-bin gradient orientation histogram around a keypoint, Gaussian weighted
/// with scale `1.5 sigma` over a disc of radius `3 sigma` (octave units).
/// Returns `None` when no sample of the disc lies inside the image.
pub(crate) fn orientation_histogram(kp: &SiftKeypoint, deriv: &LevelDerivatives, sigma_octave: f64) -> Option<[f64; ORIENTATION_BINS]> {
    let (cx, cy) = kp.octave_coords();
    let (cx, cy) = (cx.round() as isize, cy.round() as isize);
    let radius = 3.0 * sigma_octave;
    let r = radius.floor() as isize;
    let weight_sigma = 1.5 * sigma_octave;
    let denom = 2.0 * weight_sigma * weight_sigma;
    let bin_width = TAU / ORIENTATION_BINS as f64;

    let mut hist = [0f64; ORIENTATION_BINS];
    let mut any = false;
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 > radius * radius {
                continue;
            }
            let (x, y) = (cx + dx, cy + dy);
            if x < 0 || y < 0 || x as usize >= deriv.width || y as usize >= deriv.height {
                continue;
            }
            any = true;
            let (gx, gy) = deriv.at(x as usize, y as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(TAU);
            let bin = ((theta / bin_width) as usize).min(ORIENTATION_BINS - 1);
            hist[bin] += mag * (-d2 / denom).exp();
        }
    }
    any.then_some(hist)
}

/// Bin indices of circular local maxima at or above `ratio * max`.
/// Falls back to the global maximum when the histogram has no strict peak.
pub(crate) fn histogram_peaks(hist: &[f64], ratio: f64) -> Vec<usize> {
    let n = hist.len();
    let max = hist.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            let (l, r) = (hist[(i + n - 1) % n], hist[(i + 1) % n]);
            hist[i] > l && hist[i] >= r && hist[i] >= ratio * max
        })
        .collect();
    if peaks.is_empty() {
        let argmax = hist
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > hist[best] { i } else { best });
        peaks.push(argmax);
    }
    peaks
}

pub(crate) fn assign_orientation_with(
    kp: &SiftKeypoint,
    deriv: &LevelDerivatives,
    sigma_octave: f64,
    peak_ratio: f64,
) -> Vec<SiftKeypoint> {
    let Some(hist) = orientation_histogram(kp, deriv, sigma_octave) else {
        return Vec::new();
    };
    let bin_width = TAU / ORIENTATION_BINS as f64;
    histogram_peaks(&hist, peak_ratio)
        .into_iter()
        .map(|b| SiftKeypoint {
            orientation: (b as f64 + 0.5) * bin_width,
            ..*kp
        })
        .collect()
}

/// One oriented copy of `kp` per dominant histogram peak (>= 80% of the
/// maximum). Empty when the neighbourhood lies entirely outside the image.
pub fn assign_orientation(kp: &SiftKeypoint, ss: &ScaleSpace) -> Result<Vec<SiftKeypoint>> {
    let level = level_image(ss, kp)?;
    let deriv = LevelDerivatives::new(level);
    Ok(assign_orientation_with(
        kp,
        &deriv,
        ss.sigmas[kp.level],
        SiftParams::default().peak_ratio,
    ))
}

fn level_image<'a>(ss: &'a ScaleSpace, kp: &SiftKeypoint) -> Result<&'a Image> {
    ss.octaves
        .get(kp.octave)
        .and_then(|o| o.get(kp.level))
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "keypoint octave {} level {} outside the scale space",
                kp.octave, kp.level
            ))
        })
}

/// Unit-norm SIFT descriptor, `grid^2 * bins` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiftDescriptor {
    pub values: Vec<f32>,
}

impl SiftDescriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DescriptorShape {
    pub grid: usize,
    pub bins: usize,
    pub patch_size: usize,
}

pub(crate) fn compute_descriptor_with(
    kp: &SiftKeypoint,
    deriv: &LevelDerivatives,
    shape: DescriptorShape,
) -> Option<SiftDescriptor> {
    let DescriptorShape {
        grid,
        bins,
        patch_size,
    } = shape;
    let (cx, cy) = kp.octave_coords();
    let (sin, cos) = kp.orientation.sin_cos();
    let half = patch_size as f64 / 2.0;
    let cell = patch_size / grid;
    let weight_sigma = patch_size as f64 / 2.0;
    let denom = 2.0 * weight_sigma * weight_sigma;
    let bin_width = TAU / bins as f64;

    let mut hist = vec![0f64; grid * grid * bins];
    for row in 0..patch_size {
        for col in 0..patch_size {
            // offsets in the canonical (keypoint-aligned) frame
            let u = col as f64 + 0.5 - half;
            let v = row as f64 + 0.5 - half;
            let x = cx + cos * u - sin * v;
            let y = cy + sin * u + cos * v;
            let (gx, gy) = deriv.sample(x, y)?;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = (gy.atan2(gx) - kp.orientation).rem_euclid(TAU);
            let bin = ((theta / bin_width) as usize).min(bins - 1);
            let region = (row / cell) * grid + col / cell;
            hist[region * bins + bin] += mag * (-(u * u + v * v) / denom).exp();
        }
    }
    Some(SiftDescriptor {
        values: normalize_clamp(hist),
    })
}

/// Unit-normalizes, clamps entries at 0.2 and renormalizes.
fn normalize_clamp(mut v: Vec<f64>) -> Vec<f32> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x / n).min(0.2));
        let n2 = norm(&v);
        v.iter_mut().for_each(|x| *x /= n2);
    }
    v.into_iter().map(|x| x as f32).collect()
}

/// Descriptor of an oriented keypoint from an `patch_size`² patch rotated into
/// the keypoint frame. `None` when the patch leaves the image.
pub fn compute_descriptor(
    kp: &SiftKeypoint,
    ss: &ScaleSpace,
    grid: usize,
    bins: usize,
    patch_size: usize,
) -> Result<Option<SiftDescriptor>> {
    if grid == 0 || bins == 0 || patch_size == 0 || patch_size % grid != 0 {
        return Err(Error::InvalidArgument(format!(
            "descriptor patch {patch_size} must be a positive multiple of grid {grid}, bins {bins} > 0"
        )));
    }
    let deriv = LevelDerivatives::new(level_image(ss, kp)?);
    Ok(compute_descriptor_with(
        kp,
        &deriv,
        DescriptorShape {
            grid,
            bins,
            patch_size,
        },
    ))
}

/// Sorts by response (descending) with ties broken by (octave, level, y, x).
pub fn rank_keypoints(kps: &mut [SiftKeypoint]) {
    kps.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.octave.cmp(&b.octave))
            .then(a.level.cmp(&b.level))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
}

/// Full pipeline: the `max_keypoints` strongest extrema are oriented and
/// described. Orientation peaks may duplicate a keypoint, and keypoints whose
/// patch leaves the image are dropped, so the output length can differ from
/// the budget in either direction.
pub fn sift_detect_and_describe(
    img: &Image,
    max_keypoints: usize,
    params: &SiftParams,
) -> Result<Vec<(SiftKeypoint, SiftDescriptor)>> {
    Ok(sift_detect_ranked(img, max_keypoints, params)?
        .into_iter()
        .map(|(_, kp, d)| (kp, d))
        .collect())
}

/// Like [`sift_detect_and_describe`], with each feature tagged by the rank of
/// its extremum. Filtering by `rank < b` reproduces the output for budget `b`.
pub fn sift_detect_ranked(
    img: &Image,
    max_keypoints: usize,
    params: &SiftParams,
) -> Result<Vec<(usize, SiftKeypoint, SiftDescriptor)>> {
    params.validate()?;
    let gray = to_grayscale(img)?;
    let ss = build_scale_space(&gray, params.octaves, params.levels_per_octave, params.sigma0)?;
    let dog = difference_of_gaussians(&ss)?;
    let mut kps = detect_extrema(&dog, params.contrast_threshold);
    rank_keypoints(&mut kps);
    kps.truncate(max_keypoints);
    if kps.is_empty() {
        return Ok(Vec::new());
    }

    let derivs = DerivativePyramid::new(&ss);
    let shape = DescriptorShape {
        grid: params.grid,
        bins: params.bins,
        patch_size: params.patch_size,
    };
    let mut out = Vec::with_capacity(kps.len());
    for (rank, kp) in kps.iter().enumerate() {
        let deriv = derivs.get(kp).expect("extrema come from this pyramid");
        for oriented in assign_orientation_with(kp, deriv, ss.sigmas[kp.level], params.peak_ratio) {
            if let Some(desc) = compute_descriptor_with(&oriented, deriv, shape) {
                out.push((rank, oriented, desc));
            }
        }
    }
    Ok(out)
}
