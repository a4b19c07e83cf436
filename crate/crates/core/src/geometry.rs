//! Planar homographies: DLT estimation and RANSAC verification.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::XorShift64Star;

const DEGENERATE: f64 = 1e-12;

pub type Point = [f64; 2];

/// 3×3 projective transform normalized so that `h33 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    /// Normalizes by `h33`; rejects `|h33| < 1e-12` and singular matrices.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let h33 = m[(2, 2)];
        if !h33.is_finite() || h33.abs() < DEGENERATE {
            return Err(Error::NormalizationFailed);
        }
        let m = m / h33;
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::EstimationFailed("non-finite homography".into()));
        }
        if m.determinant().abs() <= DEGENERATE {
            return Err(Error::EstimationFailed("singular homography".into()));
        }
        Ok(Self(m))
    }

    pub fn from_row_major(h: [f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(&h))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::EstimationFailed("homography is not invertible".into()))?;
        Self::new(inv)
    }
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let h = <[f64; 9]>::deserialize(d)?;
        Homography::from_row_major(h).map_err(serde::de::Error::custom)
    }
}

/// Maps `p` through any 3×3 matrix with homogeneous division.
pub fn project(m: &Matrix3<f64>, p: Point) -> Result<Point> {
    let w = m[(2, 0)] * p[0] + m[(2, 1)] * p[1] + m[(2, 2)];
    if !(w.abs() >= DEGENERATE) {
        return Err(Error::PointAtInfinity);
    }
    Ok([
        (m[(0, 0)] * p[0] + m[(0, 1)] * p[1] + m[(0, 2)]) / w,
        (m[(1, 0)] * p[0] + m[(1, 1)] * p[1] + m[(1, 2)]) / w,
    ])
}

pub fn apply_homography(h: &Homography, p: Point) -> Result<Point> {
    project(&h.0, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: Point,
    pub dst: Point,
}

impl Correspondence {
    pub fn new(src: Point, dst: Point) -> Self {
        Self { src, dst }
    }
}

/// `||dst - H src||`, or `+inf` when `src` maps to infinity.
pub fn reprojection_error(h: &Homography, c: &Correspondence) -> f64 {
    match apply_homography(h, c.src) {
        Ok(p) => ((p[0] - c.dst[0]).powi(2) + (p[1] - c.dst[1]).powi(2)).sqrt(),
        Err(_) => f64::INFINITY,
    }
}

/// Similarity that moves the centroid to the origin with mean distance sqrt(2).
fn hartley_transform<'a>(points: impl Iterator<Item = &'a Point> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > DEGENERATE) || !mean_dist.is_finite() {
        return Err(Error::EstimationFailed("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: &Point) -> Point {
    // similarity transforms have w = 1
    [
        t[(0, 0)] * p[0] + t[(0, 2)],
        t[(1, 1)] * p[1] + t[(1, 2)],
    ]
}

/// The two DLT rows for one correspondence, in the order of `h`
/// `[h11 h12 h13 h21 h22 h23 h31 h32 h33]`.
fn dlt_rows(src: Point, dst: Point) -> [[f64; 9]; 2] {
    let ([x, y], [xp, yp]) = (src, dst);
    [
        [x, y, 1.0, 0.0, 0.0, 0.0, -x * xp, -y * xp, -xp],
        [0.0, 0.0, 0.0, x, y, 1.0, -x * yp, -y * yp, -yp],
    ]
}

/// Null vector of an 8×9 system via Householder QR with column pivoting of
/// its transpose: the last column of the full orthogonal factor spans the
/// orthogonal complement of the row space.
fn minimal_null_vector(rows: &[[f64; 9]; 8]) -> Result<[f64; 9]> {
    // columns of A^T are the equations
    let mut cols: [[f64; 9]; 8] = *rows;
    let mut reflectors: Vec<[f64; 9]> = Vec::with_capacity(8);
    let mut first_diag = 0.0;
    for k in 0..8 {
        let tail_norm = |c: &[f64; 9]| c[k..].iter().map(|v| v * v).sum::<f64>();
        let pivot = (k..8)
            .max_by(|&a, &b| tail_norm(&cols[a]).total_cmp(&tail_norm(&cols[b])))
            .expect("non-empty range");
        cols.swap(k, pivot);
        let norm = tail_norm(&cols[k]).sqrt();
        if k == 0 {
            first_diag = norm;
        }
        if !(norm > 1e-10 * first_diag) || first_diag == 0.0 {
            return Err(Error::EstimationFailed(
                "rank-deficient DLT system (degenerate configuration)".into(),
            ));
        }
        let alpha = if cols[k][k] > 0.0 { -norm } else { norm };
        let mut v = [0f64; 9];
        v[k..].copy_from_slice(&cols[k][k..]);
        v[k] -= alpha;
        let vnorm = v[k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        v[k..].iter_mut().for_each(|x| *x /= vnorm);
        for c in cols.iter_mut().skip(k + 1) {
            let dot: f64 = v[k..].iter().zip(&c[k..]).map(|(a, b)| a * b).sum();
            for i in k..9 {
                c[i] -= 2.0 * dot * v[i];
            }
        }
        reflectors.push(v);
    }
    let mut e = [0f64; 9];
    e[8] = 1.0;
    for (k, v) in reflectors.iter().enumerate().rev() {
        let dot: f64 = v[k..].iter().zip(&e[k..]).map(|(a, b)| a * b).sum();
        for i in k..9 {
            e[i] -= 2.0 * dot * v[i];
        }
    }
    Ok(e)
}

/// Unit vector minimizing `||A h||` via SVD.
fn least_squares_null_vector(rows: &[[f64; 9]]) -> Result<[f64; 9]> {
    let a = DMatrix::from_fn(rows.len(), 9, |r, c| rows[r][c]);
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::EstimationFailed("SVD did not converge".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    let (smallest, second, largest) = (order[0], order[1], order[sv.len() - 1]);
    if !(sv[second] > 1e-10 * sv[largest]) {
        return Err(Error::EstimationFailed(
            "rank-deficient DLT system (degenerate configuration)".into(),
        ));
    }
    let mut h = [0f64; 9];
    for (c, v) in h.iter_mut().enumerate() {
        *v = v_t[(smallest, c)];
    }
    Ok(h)
}

/// Direct linear transform over `n >= 4` correspondences with Hartley
/// normalization of both point sets.
pub fn estimate_homography_dlt(corrs: &[Correspondence]) -> Result<Homography> {
    if corrs.len() < 4 {
        return Err(Error::EstimationFailed(format!(
            "need at least 4 correspondences, got {}",
            corrs.len()
        )));
    }
    let t_src = hartley_transform(corrs.iter().map(|c| &c.src))?;
    let t_dst = hartley_transform(corrs.iter().map(|c| &c.dst))?;
    let rows: Vec<[f64; 9]> = corrs
        .iter()
        .flat_map(|c| dlt_rows(transform(&t_src, &c.src), transform(&t_dst, &c.dst)))
        .collect();
    let h = if rows.len() == 8 {
        minimal_null_vector(rows.as_slice().try_into().expect("8 rows"))?
    } else {
        least_squares_null_vector(&rows)?
    };
    let hn = Matrix3::from_row_slice(&h);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::EstimationFailed("singular normalization".into()))?;
    Homography::new(t_dst_inv * hn * t_src)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Reprojection threshold in pixels.
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Stop once this confidence of having drawn an all-inlier sample is
    /// reached. `None` always runs `max_iters`.
    pub confidence: Option<f64>,
    /// Rejects candidate models that fold the source bounding box behind
    /// the camera or scale its local area by more than this factor either
    /// way. `None` accepts every non-degenerate model.
    pub max_area_scale: Option<f64>,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            epsilon: 3.0,
            max_iters: 2000,
            seed: 0,
            confidence: Some(0.999),
            max_area_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacResult {
    pub homography: Homography,
    pub inlier_indices: Vec<usize>,
    pub iterations_run: usize,
    pub seed: u64,
    /// Largest consensus among the minimal-sample candidates.
    pub best_sample_inliers: usize,
}

fn nearly_collinear(a: Point, b: Point, c: Point) -> bool {
    let (ux, uy) = (b[0] - a[0], b[1] - a[1]);
    let (vx, vy) = (c[0] - a[0], c[1] - a[1]);
    let cross = (ux * vy - uy * vx).abs();
    let scale = (ux * ux + uy * uy).sqrt() * (vx * vx + vy * vy).sqrt();
    !(cross > 1e-6 * scale) || scale == 0.0
}

const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];

fn sample_degenerate(points: [Point; 4]) -> bool {
    TRIPLES
        .iter()
        .any(|t| nearly_collinear(points[t[0]], points[t[1]], points[t[2]]))
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// A homography between two views of a plane cannot mirror it, so every
/// triangle of the sample must keep its orientation.
fn orientation_flips(src: [Point; 4], dst: [Point; 4]) -> bool {
    TRIPLES.iter().any(|t| {
        signed_area(src[t[0]], src[t[1]], src[t[2]]) * signed_area(dst[t[0]], dst[t[1]], dst[t[2]]) <= 0.0
    })
}

fn inliers_of(h: &Homography, corrs: &[Correspondence], epsilon: f64) -> Vec<usize> {
    let m = h.matrix();
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let w = m[(2, 0)] * c.src[0] + m[(2, 1)] * c.src[1] + m[(2, 2)];
            if !(w.abs() >= DEGENERATE) {
                return false;
            }
            let x = (m[(0, 0)] * c.src[0] + m[(0, 1)] * c.src[1] + m[(0, 2)]) / w;
            let y = (m[(1, 0)] * c.src[0] + m[(1, 1)] * c.src[1] + m[(1, 2)]) / w;
            ((x - c.dst[0]).powi(2) + (y - c.dst[1]).powi(2)).sqrt() < epsilon
        })
        .map(|(i, _)| i)
        .collect()
}

fn count_inliers(h: &Homography, corrs: &[Correspondence], epsilon: f64) -> usize {
    let m = h.matrix();
    let eps2 = epsilon * epsilon;
    corrs
        .iter()
        .filter(|c| {
            let w = m[(2, 0)] * c.src[0] + m[(2, 1)] * c.src[1] + m[(2, 2)];
            if !(w.abs() >= DEGENERATE) {
                return false;
            }
            let x = (m[(0, 0)] * c.src[0] + m[(0, 1)] * c.src[1] + m[(0, 2)]) / w;
            let y = (m[(1, 0)] * c.src[0] + m[(1, 1)] * c.src[1] + m[(1, 2)]) / w;
            let d2 = (x - c.dst[0]).powi(2) + (y - c.dst[1]).powi(2);
            // squared comparison, confirmed with the exact test at the boundary
            d2 < eps2 && d2.sqrt() < epsilon
        })
        .count()
}

/// Local area scale `det(H) / w^3` stays within `[1/s, s]` and `w > 0` at
/// every corner of `bbox`. Both quantities are monotone between corners,
/// so checking the corners covers the whole box.
fn plausible(h: &Homography, bbox: [Point; 2], max_scale: f64) -> bool {
    let m = h.matrix();
    let det = m.determinant();
    [bbox[0][0], bbox[1][0]].iter().all(|&x| {
        [bbox[0][1], bbox[1][1]].iter().all(|&y| {
            let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
            if !(w > 0.0) {
                return false;
            }
            let scale = det / (w * w * w);
            scale >= 1.0 / max_scale && scale <= max_scale
        })
    })
}

fn bounding_box(points: impl Iterator<Item = Point>) -> [Point; 2] {
    points.fold([[f64::INFINITY; 2], [f64::NEG_INFINITY; 2]], |[lo, hi], p| {
        [[lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])]]
    })
}

/// Iterations needed to draw an all-inlier 4-sample with probability
/// `confidence` given inlier fraction `w`.
fn required_iterations(confidence: f64, w: f64) -> usize {
    let p = w.powi(4);
    if p >= 1.0 {
        return 1;
    }
    if p <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Robust homography fit. Each iteration draws 4 distinct correspondences,
/// rejects samples with three nearly collinear points, fits a DLT model and
/// counts inliers (`error < epsilon`). The best model (earliest on ties) is
/// refit on its full inlier set; the refit is kept only if it does not lose
/// consensus.
pub fn ransac_homography(corrs: &[Correspondence], config: &RansacConfig) -> Result<RansacResult> {
    if corrs.len() < 4 {
        return Err(Error::NoConsensus(format!(
            "need at least 4 correspondences, got {}",
            corrs.len()
        )));
    }
    if !(config.epsilon > 0.0) {
        return Err(Error::InvalidArgument("RANSAC epsilon must be positive".into()));
    }
    if config.max_area_scale.is_some_and(|s| !(s >= 1.0)) {
        return Err(Error::InvalidArgument("max_area_scale must be at least 1".into()));
    }
    let bbox = bounding_box(corrs.iter().map(|c| c.src));
    let acceptable = |h: &Homography| config.max_area_scale.map_or(true, |s| plausible(h, bbox, s));
    let n = corrs.len();
    let mut rng = XorShift64Star::new(config.seed);
    let mut best: Option<(Homography, usize)> = None;
    let mut budget = config.max_iters;
    let mut iterations = 0;
    while iterations < budget.min(config.max_iters) {
        iterations += 1;
        let mut idx = [0usize; 4];
        for k in 0..4 {
            idx[k] = loop {
                let cand = rng.below(n as u64) as usize;
                if !idx[..k].contains(&cand) {
                    break cand;
                }
            };
        }
        let sample = idx.map(|i| corrs[i]);
        let (src, dst) = (sample.map(|c| c.src), sample.map(|c| c.dst));
        if sample_degenerate(src) || sample_degenerate(dst) || orientation_flips(src, dst) {
            continue;
        }
        let Ok(h) = estimate_homography_dlt(&sample) else {
            continue;
        };
        if !acceptable(&h) {
            continue;
        }
        let count = count_inliers(&h, corrs, config.epsilon);
        if best.as_ref().map_or(true, |(_, c)| count > *c) {
            best = Some((h, count));
            if let Some(conf) = config.confidence {
                budget = required_iterations(conf, count as f64 / n as f64);
            }
        }
    }

    let Some((candidate, best_count)) = best.filter(|(_, c)| *c >= 4) else {
        return Err(Error::NoConsensus(format!(
            "no model reached 4 inliers in {iterations} iterations"
        )));
    };
    let candidate_inliers = inliers_of(&candidate, corrs, config.epsilon);
    let mut homography = candidate;
    let mut inlier_indices = candidate_inliers;
    if inlier_indices.len() > 4 {
        let subset: Vec<Correspondence> = inlier_indices.iter().map(|&i| corrs[i]).collect();
        if let Some(refit) = estimate_homography_dlt(&subset).ok().filter(|h| acceptable(h)) {
            let refit_inliers = inliers_of(&refit, corrs, config.epsilon);
            if refit_inliers.len() >= inlier_indices.len() {
                homography = refit;
                inlier_indices = refit_inliers;
            }
        }
    }
    Ok(RansacResult {
        homography,
        inlier_indices,
        iterations_run: iterations,
        seed: config.seed,
        best_sample_inliers: best_count,
    })
}
