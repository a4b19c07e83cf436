//! Descriptor distances and one-directional brute-force nearest-neighbour
//! matching.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orb::BriefDescriptor;
use crate::sift::SiftDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Hamming,
}

pub fn euclidean_distance(a: &SiftDescriptor, b: &SiftDescriptor) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(squared_euclidean(&a.values, &b.values).sqrt())
}

#[inline]
fn squared_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

pub fn hamming_distance(a: &BriefDescriptor, b: &BriefDescriptor) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(xor_popcount(a.words(), b.words()))
}

#[inline]
fn xor_popcount(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    #[serde(rename = "a")]
    pub index_a: usize,
    #[serde(rename = "b")]
    pub index_b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub metric: Metric,
    pub matches: Vec<Match>,
    #[serde(skip)]
    pub n_a: usize,
    #[serde(skip)]
    pub n_b: usize,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// A homogeneous list of descriptors from one image.
#[derive(Debug, Clone, PartialEq)]
pub enum DescriptorList {
    Sift(Vec<SiftDescriptor>),
    Brief(Vec<BriefDescriptor>),
}

impl DescriptorList {
    pub fn len(&self) -> usize {
        match self {
            DescriptorList::Sift(v) => v.len(),
            DescriptorList::Brief(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn metric(&self) -> Metric {
        match self {
            DescriptorList::Sift(_) => Metric::Euclidean,
            DescriptorList::Brief(_) => Metric::Hamming,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            DescriptorList::Sift(_) => "sift",
            DescriptorList::Brief(_) => "brief",
        }
    }
}

/// For every descriptor in `a`, the closest descriptor in `b` (lowest index
/// on ties). Empty when either side is empty.
pub fn brute_force_match(a: &DescriptorList, b: &DescriptorList, metric: Metric) -> Result<MatchSet> {
    let matches = match (a, b) {
        (DescriptorList::Sift(da), DescriptorList::Sift(db)) if metric == Metric::Euclidean => {
            if let (Some(x), Some(y)) = (da.first(), db.first()) {
                if x.len() != y.len() {
                    return Err(Error::LengthMismatch(x.len(), y.len()));
                }
            }
            nearest(da, db, |x, y| squared_euclidean(&x.values, &y.values))
                .into_iter()
                .map(|(i, j, d2)| Match {
                    index_a: i,
                    index_b: j,
                    distance: d2.sqrt(),
                })
                .collect()
        }
        (DescriptorList::Brief(da), DescriptorList::Brief(db)) if metric == Metric::Hamming => {
            if let (Some(x), Some(y)) = (da.first(), db.first()) {
                if x.len() != y.len() {
                    return Err(Error::LengthMismatch(x.len(), y.len()));
                }
            }
            nearest(da, db, |x, y| xor_popcount(x.words(), y.words()))
                .into_iter()
                .map(|(i, j, d)| Match {
                    index_a: i,
                    index_b: j,
                    distance: f64::from(d),
                })
                .collect()
        }
        _ if a.metric() == b.metric() => {
            return Err(Error::InvalidArgument(format!(
                "{metric:?} metric does not apply to {} descriptors",
                a.kind_name()
            )))
        }
        _ => return Err(Error::MixedDescriptorKinds(a.kind_name(), b.kind_name())),
    };
    Ok(MatchSet {
        metric,
        matches,
        n_a: a.len(),
        n_b: b.len(),
    })
}

fn nearest<T: Sync, D: PartialOrd + Copy + Send>(
    a: &[T],
    b: &[T],
    dist: impl Fn(&T, &T) -> D + Sync,
) -> Vec<(usize, usize, D)> {
    if b.is_empty() {
        return Vec::new();
    }
    a.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut best = (0, dist(x, &b[0]));
            for (j, y) in b.iter().enumerate().skip(1) {
                let d = dist(x, y);
                if d < best.1 {
                    best = (j, d);
                }
            }
            (i, best.0, best.1)
        })
        .collect()
}
