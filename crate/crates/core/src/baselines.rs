//! Reference frame selectors: uniform, top-k, inverse transform sampling,
//! and plain watershed frames, plus clip augmentation of a frame selection.

use serde::{Deserialize, Serialize};

use crate::anchors::select_anchors;
use crate::model::SimilarityCurve;
use crate::planner::clip_span;
use crate::scalar::Scalar;

/// Exponent recommended for the inverse-transform-sampling baseline.
pub const DEFAULT_ITS_ALPHA: f64 = 2.5;

/// Sorted, distinct frame indices chosen by a selector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSelection {
    pub method: String,
    pub indices: Vec<usize>,
}

impl FrameSelection {
    fn new(method: &str, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { method: method.to_owned(), indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string(self).expect("selection serialization is infallible");
        out.push('\n');
        out
    }
}

/// Midpoints of `k` equal temporal bins: `floor((j + 0.5) * n / k)`.
pub fn uniform_select(n: usize, k: usize) -> FrameSelection {
    if k >= n {
        return FrameSelection::new("uniform", (0..n).collect());
    }
    FrameSelection::new("uniform", (0..k).map(|j| (2 * j + 1) * n / (2 * k)).collect())
}

/// The `k` highest-scoring frames (earlier wins ties), in temporal order.
pub fn topk_select<T: Scalar>(curve: &SimilarityCurve<T>, k: usize) -> FrameSelection {
    let s = curve.scores();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order.truncate(k);
    FrameSelection::new("topk", order)
}

/// Deterministic inverse transform sampling over relevancy-shaped weights.
///
/// Weights are `((r - r_min) / (r_max - r_min))^alpha` (all ones for a flat
/// curve). Quantile `(j + 0.5) / k` maps to the first frame whose cumulative
/// weight strictly exceeds it; a frame already taken passes the hit on to the
/// next free frame (searching forward, then backward).
pub fn its_select<T: Scalar>(curve: &SimilarityCurve<T>, k: usize, alpha: T) -> FrameSelection {
    let s = curve.scores();
    let n = s.len();
    if k >= n {
        return FrameSelection::new("its", (0..n).collect());
    }
    let (lo, hi) = s.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let weights: Vec<T> =
        if hi > lo { s.iter().map(|&x| ((x - lo) / (hi - lo)).powf(alpha)).collect() } else { vec![T::one(); n] };
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = T::zero();
    for w in &weights {
        acc = acc + *w;
        cumulative.push(acc);
    }
    let total = acc;
    let two_k = T::of_usize(2 * k);

    let mut taken = vec![false; n];
    let mut picked = Vec::with_capacity(k);
    for j in 0..k {
        // cumulative[i] / total > (2j + 1) / 2k, without dividing.
        let target = T::of_usize(2 * j + 1) * total;
        let hit = cumulative.partition_point(|&c| c * two_k <= target).min(n - 1);
        let free = (hit..n).find(|&i| !taken[i]).or_else(|| (0..hit).rev().find(|&i| !taken[i]));
        if let Some(i) = free {
            taken[i] = true;
            picked.push(i);
        }
    }
    FrameSelection::new("its", picked)
}

/// Watershed anchors with `k` anchors, as a frame selection.
pub fn watershed_select<T: Scalar>(curve: &SimilarityCurve<T>, k: usize) -> FrameSelection {
    FrameSelection::new("watershed", select_anchors(curve, k).indices)
}

/// Widens every selected frame into a window of `extension` frames and merges
/// windows that share a frame. Returns inclusive spans sorted by start.
pub fn augment_to_clips(selection: &[usize], extension: usize, n: usize) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> =
        selection.iter().filter(|&&i| i < n).map(|&i| clip_span(i, extension.max(1), n)).collect();
    spans.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for (s, e) in spans {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}
