//! ORB: FAST segment test, Harris ranking, gradient-histogram orientation and
//! rotation-steered BRIEF.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_core::{gaussian_blur, to_grayscale, Image};
use crate::rng::XorShift64Star;

/// Radius-3 Bresenham circle, clockwise from twelve o'clock.
pub const CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const FAST_BORDER: usize = 3;
const ORIENTATION_BINS: usize = 36;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbParams {
    /// FAST intensity threshold on the `[0, 1]` scale.
    pub fast_threshold: f32,
    /// Minimum contiguous arc length on the 16-pixel circle.
    pub arc_length: usize,
    /// Harris half-window (the neighbourhood is `(2w+1)^2`).
    pub harris_window: usize,
    pub harris_alpha: f64,
    /// Patch side for orientation and BRIEF sampling.
    pub patch_size: usize,
    pub n_bits: usize,
    /// Blur applied before orientation and binary tests.
    pub sampling_sigma: f64,
    pub pattern_seed: u64,
}

impl Default for OrbParams {
    fn default() -> Self {
        Self {
            fast_threshold: 0.08,
            arc_length: 12,
            harris_window: 3,
            harris_alpha: 0.04,
            patch_size: 31,
            n_bits: 256,
            sampling_sigma: 2.0,
            pattern_seed: 0x0b5e_55ed,
        }
    }
}

impl OrbParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(9..=16).contains(&self.arc_length) {
            return bad("orb arc_length must be in 9..=16");
        }
        if !(self.fast_threshold > 0.0) {
            return bad("orb fast_threshold must be positive");
        }
        if self.harris_window == 0 {
            return bad("orb harris_window must be positive");
        }
        if self.patch_size < 8 || self.n_bits == 0 {
            return bad("orb patch_size must be >= 8 and n_bits >= 1");
        }
        if !(self.sampling_sigma > 0.0) {
            return bad("orb sampling_sigma must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbKeypoint {
    pub x: usize,
    pub y: usize,
    pub harris_score: f64,
    /// Radians in `[0, 2 pi)`.
    pub orientation: f64,
}

/// Bitmask of circle pixels brighter than `center + t` and darker than `center - t`.
#[inline]
fn circle_masks(img: &Image, x: usize, y: usize, t: f32) -> (u32, u32) {
    let c = img.get(x, y);
    let (mut bright, mut dark) = (0u32, 0u32);
    for (i, &(dx, dy)) in CIRCLE.iter().enumerate() {
        let v = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
        if v > c + t {
            bright |= 1 << i;
        } else if v < c - t {
            dark |= 1 << i;
        }
    }
    (bright, dark)
}

/// Whether a 16-bit circular mask contains a run of at least `n` set bits.
#[inline]
fn has_circular_run(mask: u32, n: usize) -> bool {
    if mask == 0xFFFF {
        return true;
    }
    let doubled = mask | (mask << 16);
    let mut run = 0;
    for i in 0..32 {
        if doubled >> i & 1 == 1 {
            run += 1;
            if run >= n {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// FAST segment test. A pixel is a corner when `arc_length` circularly
/// contiguous circle pixels are all brighter than `center + t` or all darker
/// than `center - t`. Pixels within 3 of the border are skipped.
pub fn fast_detect(img: &Image, t: f32, arc_length: usize) -> Result<Vec<OrbKeypoint>> {
    if !(9..=16).contains(&arc_length) || !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "FAST needs 9 <= arc_length <= 16 and t > 0, got {arc_length}, {t}"
        )));
    }
    let img = to_grayscale(img)?;
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::new();
    if w <= 2 * FAST_BORDER || h <= 2 * FAST_BORDER {
        return Ok(out);
    }
    // Any arc of length n covers at least n/4 of the four compass pixels.
    let compass_needed = arc_length / 4;
    for y in FAST_BORDER..h - FAST_BORDER {
        for x in FAST_BORDER..w - FAST_BORDER {
            let c = img.get(x, y);
            let (mut nb, mut nd) = (0, 0);
            for &i in &[0usize, 4, 8, 12] {
                let (dx, dy) = CIRCLE[i];
                let v = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
                if v > c + t {
                    nb += 1;
                } else if v < c - t {
                    nd += 1;
                }
            }
            if nb < compass_needed && nd < compass_needed {
                continue;
            }
            let (bright, dark) = circle_masks(&img, x, y, t);
            if has_circular_run(bright, arc_length) || has_circular_run(dark, arc_length) {
                out.push(OrbKeypoint {
                    x,
                    y,
                    harris_score: 0.0,
                    orientation: 0.0,
                });
            }
        }
    }
    Ok(out)
}

/// `det(M) - alpha * trace(M)^2` over a Gaussian-weighted `(2 window + 1)^2`
/// neighbourhood of central-difference gradients.
pub fn harris_score(img: &Image, x: usize, y: usize, window: usize, alpha: f64) -> Result<f64> {
    let (w, h) = (img.width(), img.height());
    let reach = window + 1;
    if x < reach || y < reach || x + reach >= w || y + reach >= h {
        return Err(Error::InvalidArgument(format!(
            "Harris window {window} around ({x}, {y}) leaves the {w}x{h} image"
        )));
    }
    let sigma = window as f64 / 2.0;
    let denom = 2.0 * sigma * sigma;
    let (mut sxx, mut sxy, mut syy) = (0f64, 0f64, 0f64);
    let r = window as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let (px, py) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
            let ix = f64::from(img.get(px + 1, py) - img.get(px - 1, py)) * 0.5;
            let iy = f64::from(img.get(px, py + 1) - img.get(px, py - 1)) * 0.5;
            let wt = (-((dx * dx + dy * dy) as f64) / denom).exp();
            sxx += wt * ix * ix;
            sxy += wt * ix * iy;
            syy += wt * iy * iy;
        }
    }
    let det = sxx * syy - sxy * sxy;
    let trace = sxx + syy;
    Ok(det - alpha * trace * trace)
}

/// Peak bin center of a 36-bin magnitude-weighted gradient-orientation
/// histogram over the `patch_size`² patch centred on `(x, y)`.
pub fn orb_orientation(img: &Image, x: usize, y: usize, patch_size: usize) -> Result<f64> {
    let half = patch_size / 2;
    let (w, h) = (img.width(), img.height());
    if x < half + 1 || y < half + 1 || x + half + 1 >= w || y + half + 1 >= h {
        return Err(Error::InvalidArgument(format!(
            "orientation patch {patch_size} around ({x}, {y}) leaves the {w}x{h} image"
        )));
    }
    let bin_width = TAU / ORIENTATION_BINS as f64;
    let mut hist = [0f64; ORIENTATION_BINS];
    for py in y - half..=y + half {
        for px in x - half..=x + half {
            let gx = f64::from(img.get(px + 1, py) - img.get(px - 1, py)) * 0.5;
            let gy = f64::from(img.get(px, py + 1) - img.get(px, py - 1)) * 0.5;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(TAU);
            hist[((theta / bin_width) as usize).min(ORIENTATION_BINS - 1)] += mag;
        }
    }
    let peak = hist
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > hist[best] { i } else { best });
    Ok((peak as f64 + 0.5) * bin_width)
}

/// Fixed BRIEF test pairs `(p_i, q_i)` as integer offsets from the patch centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BriefPattern {
    pub pairs: Vec<[(i32, i32); 2]>,
    pub patch_size: usize,
    pub seed: u64,
}

/// Draws `n` test pairs with coordinates ~ N(0, (S/5)^2), rounded, and
/// resampled until each point lies in the disc of radius `S/2`.
pub fn brief_pattern(seed: u64, patch_size: usize, n: usize) -> Result<BriefPattern> {
    if n == 0 || patch_size < 8 {
        return Err(Error::InvalidArgument(format!(
            "BRIEF pattern needs n >= 1 and patch_size >= 8, got {n}, {patch_size}"
        )));
    }
    let mut rng = XorShift64Star::new(seed);
    let sigma = patch_size as f64 / 5.0;
    let radius = patch_size as f64 / 2.0;
    let mut point = || loop {
        let px = (rng.gaussian() * sigma).round();
        let py = (rng.gaussian() * sigma).round();
        if px * px + py * py <= radius * radius {
            return (px as i32, py as i32);
        }
    };
    let pairs = (0..n).map(|_| [point(), point()]).collect();
    Ok(BriefPattern {
        pairs,
        patch_size,
        seed,
    })
}

/// Packed binary descriptor; bit `i` lives in word `i / 64` at position `i % 64`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BriefDescriptor {
    words: Vec<u64>,
    n_bits: usize,
}

impl BriefDescriptor {
    pub fn zeros(n_bits: usize) -> Self {
        Self {
            words: vec![0; n_bits.div_ceil(64)],
            n_bits,
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut d = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            d.set(i, b);
        }
        d
    }

    pub fn len(&self) -> usize {
        self.n_bits
    }

    pub fn is_empty(&self) -> bool {
        self.n_bits == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.n_bits);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.n_bits);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    /// Bitwise complement, keeping unused trailing bits zero.
    pub fn complement(&self) -> Self {
        let mut out = Self::zeros(self.n_bits);
        for i in 0..self.n_bits {
            out.set(i, !self.get(i));
        }
        out
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Lowercase hex; byte `k` holds bits `8k..8k+8`, least significant first.
    pub fn to_hex(&self) -> String {
        let n_bytes = self.n_bits.div_ceil(8);
        let mut s = String::with_capacity(2 * n_bytes);
        for k in 0..n_bytes {
            let byte = (self.words[k / 8] >> (8 * (k % 8))) & 0xFF;
            write!(s, "{byte:02x}").unwrap();
        }
        s
    }

    pub fn from_hex(hex: &str, n_bits: usize) -> Result<Self> {
        if hex.len() != 2 * n_bits.div_ceil(8) {
            return Err(Error::InvalidArgument(format!(
                "hex descriptor of length {} cannot hold {n_bits} bits",
                hex.len()
            )));
        }
        let mut d = Self::zeros(n_bits);
        for k in 0..hex.len() / 2 {
            let byte = u64::from_str_radix(&hex[2 * k..2 * k + 2], 16)
                .map_err(|e| Error::InvalidArgument(format!("bad hex descriptor: {e}")))?;
            d.words[k / 8] |= byte << (8 * (k % 8));
        }
        let tail = n_bits % 64;
        if tail != 0 && d.words.last().is_some_and(|w| w >> tail != 0) {
            return Err(Error::InvalidArgument(
                "hex descriptor sets bits beyond its length".into(),
            ));
        }
        Ok(d)
    }
}

impl Serialize for BriefDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

/// Image with the BRIEF pre-blur applied; `brief_describe` and the pipeline
/// sample from this.
pub fn sampling_image(img: &Image, sigma: f64) -> Result<Image> {
    gaussian_blur(&to_grayscale(img)?, sigma)
}

#[inline]
fn rotate_round(p: (i32, i32), sin: f64, cos: f64) -> (isize, isize) {
    let (x, y) = (f64::from(p.0), f64::from(p.1));
    (
        (cos * x - sin * y).round() as isize,
        (sin * x + cos * y).round() as isize,
    )
}

/// Steered BRIEF: every pair is rotated by the keypoint orientation and
/// rounded, and bit `i` is set iff `I(p_i') < I(q_i')`. `smoothed` should be
/// the output of [`sampling_image`]. `None` when a test point leaves the image.
pub fn brief_describe(smoothed: &Image, kp: &OrbKeypoint, pattern: &BriefPattern) -> Option<BriefDescriptor> {
    let (sin, cos) = kp.orientation.sin_cos();
    let (w, h) = (smoothed.width() as isize, smoothed.height() as isize);
    let (cx, cy) = (kp.x as isize, kp.y as isize);
    let mut d = BriefDescriptor::zeros(pattern.pairs.len());
    for (i, [p, q]) in pattern.pairs.iter().enumerate() {
        let (px, py) = rotate_round(*p, sin, cos);
        let (qx, qy) = rotate_round(*q, sin, cos);
        let (ax, ay, bx, by) = (cx + px, cy + py, cx + qx, cy + qy);
        if ax < 0 || ay < 0 || bx < 0 || by < 0 || ax >= w || ay >= h || bx >= w || by >= h {
            return None;
        }
        if smoothed.get(ax as usize, ay as usize) < smoothed.get(bx as usize, by as usize) {
            d.words[i / 64] |= 1 << (i % 64);
        }
    }
    Some(d)
}

/// Sorts by Harris score (descending), ties by (y, x).
pub fn rank_keypoints(kps: &mut [OrbKeypoint]) {
    kps.sort_by(|a, b| {
        b.harris_score
            .total_cmp(&a.harris_score)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
}

/// FAST, Harris ranking, budget truncation, orientation and steered BRIEF.
/// Keypoints whose patch leaves the image are dropped after truncation.
pub fn orb_detect_and_describe(
    img: &Image,
    max_keypoints: usize,
    params: &OrbParams,
) -> Result<Vec<(OrbKeypoint, BriefDescriptor)>> {
    Ok(orb_detect_ranked(img, max_keypoints, params)?
        .into_iter()
        .map(|(_, kp, d)| (kp, d))
        .collect())
}

/// Like [`orb_detect_and_describe`], with each feature tagged by its corner
/// rank. Filtering by `rank < b` reproduces the output for budget `b`.
pub fn orb_detect_ranked(
    img: &Image,
    max_keypoints: usize,
    params: &OrbParams,
) -> Result<Vec<(usize, OrbKeypoint, BriefDescriptor)>> {
    params.validate()?;
    let gray = to_grayscale(img)?;
    let mut kps: Vec<OrbKeypoint> = fast_detect(&gray, params.fast_threshold, params.arc_length)?
        .into_iter()
        .filter_map(|kp| {
            harris_score(&gray, kp.x, kp.y, params.harris_window, params.harris_alpha)
                .ok()
                .map(|s| OrbKeypoint {
                    harris_score: s,
                    ..kp
                })
        })
        .collect();
    rank_keypoints(&mut kps);
    kps.truncate(max_keypoints);
    if kps.is_empty() {
        return Ok(Vec::new());
    }
    let pattern = brief_pattern(params.pattern_seed, params.patch_size, params.n_bits)?;
    let smoothed = gaussian_blur(&gray, params.sampling_sigma)?;
    Ok(kps
        .into_iter()
        .enumerate()
        .filter_map(|(rank, kp)| {
            let orientation = orb_orientation(&smoothed, kp.x, kp.y, params.patch_size).ok()?;
            let kp = OrbKeypoint { orientation, ..kp };
            brief_describe(&smoothed, &kp, &pattern).map(|d| (rank, kp, d))
        })
        .collect())
}
