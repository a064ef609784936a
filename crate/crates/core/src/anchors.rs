//! Anchor key frame selection: watershed basins on the relevancy curve,
//! then 1-D k-means over candidate timestamps when there are too many peaks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{argmax_in, SimilarityCurve};
use crate::scalar::Scalar;

/// Lloyd iterations before giving up on reaching a fixpoint.
pub const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KMeansError {
    #[error("cannot form {k} clusters from {points} points")]
    KTooLarge { k: usize, points: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

/// Selected anchors, ascending, with the candidate group each one won.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub indices: Vec<usize>,
    /// `groups[i]` holds the candidates that competed for `indices[i]`.
    pub groups: Vec<Vec<usize>>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Interior local minima: `s[i-1] > s[i] <= s[i+1]`.
///
/// A flat-bottomed valley yields only its first index; endpoints never qualify.
pub fn find_valleys<T: Scalar>(curve: &SimilarityCurve<T>) -> Vec<usize> {
    let s = curve.scores();
    (1..s.len().saturating_sub(1)).filter(|&i| s[i] < s[i - 1] && s[i] <= s[i + 1]).collect()
}

/// Highest-scoring frame of each basin between consecutive valleys.
///
/// Basins share their valley endpoints. Ties go to the earliest frame.
pub fn basin_peaks<T: Scalar>(curve: &SimilarityCurve<T>, valleys: &[usize]) -> Vec<usize> {
    let n = curve.len();
    if n == 0 {
        return Vec::new();
    }
    let mut bounds = Vec::with_capacity(valleys.len() + 2);
    bounds.push(0);
    bounds.extend(valleys.iter().copied().filter(|&v| v > 0 && v < n - 1));
    bounds.push(n - 1);
    let mut peaks: Vec<usize> = bounds.windows(2).filter_map(|w| argmax_in(curve.scores(), w[0]..w[1] + 1)).collect();
    peaks.sort_unstable();
    peaks.dedup();
    peaks
}

fn nearest(centroids: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (j, &c) in centroids.iter().enumerate().skip(1) {
        let (d, db) = ((x - c).abs(), (x - centroids[best]).abs());
        if d < db || (d == db && c < centroids[best]) {
            best = j;
        }
    }
    best
}

/// Lloyd's k-means on scalar positions.
///
/// Centroids start at the `(j + 0.5) / k` quantiles of the sorted points.
/// Distance ties go to the smaller centroid. A cluster that empties is
/// re-seeded with the point lying farthest from its current centroid.
/// Clusters come back ordered by centroid, members ascending.
pub fn kmeans_1d(points: &[usize], k: usize) -> Result<Vec<Vec<usize>>, KMeansError> {
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    let n = points.len();
    if k > n {
        return Err(KMeansError::KTooLarge { k, points: n });
    }
    let mut sorted = points.to_vec();
    sorted.sort_unstable();
    let xs: Vec<f64> = sorted.iter().map(|&p| p as f64).collect();
    let mut centroids: Vec<f64> = (0..k).map(|j| xs[(2 * j + 1) * n / (2 * k)]).collect();
    let mut assign: Vec<usize> = vec![usize::MAX; n];

    for _ in 0..KMEANS_MAX_ITERS {
        let mut next: Vec<usize> = xs.iter().map(|&x| nearest(&centroids, x)).collect();
        let mut counts = vec![0usize; k];
        for &a in &next {
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[next[i]] > 1)
                .fold(None, |best: Option<usize>, i| {
                    let d = (xs[i] - centroids[next[i]]).abs();
                    match best {
                        Some(b) if d <= (xs[b] - centroids[next[b]]).abs() => best,
                        _ => Some(i),
                    }
                })
                .expect("k <= n leaves a cluster with at least two points");
            counts[next[donor]] -= 1;
            next[donor] = j;
            counts[j] = 1;
            centroids[j] = xs[donor];
        }
        let converged = next == assign;
        assign = next;
        let mut sums = vec![0.0; k];
        for (i, &a) in assign.iter().enumerate() {
            sums[a] += xs[i];
        }
        for j in 0..k {
            centroids[j] = sums[j] / counts[j] as f64;
        }
        if converged {
            break;
        }
    }

    let mut clusters: Vec<(f64, Vec<usize>)> = centroids.iter().map(|&c| (c, Vec::new())).collect();
    for (i, &a) in assign.iter().enumerate() {
        clusters[a].1.push(sorted[i]);
    }
    clusters.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.first().cmp(&b.1.first())));
    Ok(clusters.into_iter().map(|(_, members)| members).collect())
}

/// Picks at most `k_anchor` anchors: all basin peaks if they fit, otherwise
/// the best-scoring peak of each k-means cluster of peak positions.
pub fn select_anchors<T: Scalar>(curve: &SimilarityCurve<T>, k_anchor: usize) -> AnchorSet {
    let candidates = basin_peaks(curve, &find_valleys(curve));
    if k_anchor == 0 || candidates.is_empty() {
        return AnchorSet { indices: Vec::new(), groups: Vec::new() };
    }
    let groups = if candidates.len() > k_anchor {
        kmeans_1d(&candidates, k_anchor).expect("k_anchor < candidate count")
    } else {
        candidates.iter().map(|&c| vec![c]).collect()
    };
    let scores = curve.scores();
    let mut picked: Vec<(usize, Vec<usize>)> = groups
        .into_iter()
        .map(|g| {
            let best = g
                .iter()
                .copied()
                .reduce(|a, b| if scores[b] > scores[a] || (scores[b] == scores[a] && b < a) { b } else { a })
                .expect("clusters are non-empty");
            (best, g)
        })
        .collect();
    picked.sort_by_key(|(i, _)| *i);
    let (indices, groups) = picked.into_iter().unzip();
    AnchorSet { indices, groups }
}
