//! Budgeted key clip planning.
//!
//! Every anchor is grown into a clip whose length trades off against spatial
//! resolution: a clip of `l` frames at downscale `s` costs about as much as
//! `s^2 K / K_anchor` full-resolution frames, so the whole plan stays within the
//! budget of `K` full frames. Clip length per anchor is chosen by exhaustive
//! search over `1..=l_max` of
//!
//! ```text
//! objective(l) = relevancy(l) - lambda_r * redundancy(l) + lambda_l * l / l_max
//! ```
//!
//! Output dimensions are rounded down to the grid so rounding never pushes a
//! plan over budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::select_anchors;
use crate::model::{
    tokens_for_pixels, ClipPlan, EmbeddingSequence, KeyClip, ModelError, QueryEmbedding, SelectionConfig,
    SimilarityCurve,
};
use crate::relevance::{relevancy_scores, RelevanceError};
use crate::scalar::{dot, l2_norm, Scalar};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
    #[error("curve has {curve} scores but the sequence has {frames} frames")]
    CurveLength { curve: usize, frames: usize },
    #[error("plan uses {total} tokens, over the budget of {budget}")]
    BudgetViolation { total: u64, budget: u64 },
}

/// How clip lengths are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthPolicy {
    /// Exhaustive search of the clip objective.
    #[default]
    Optimize,
    /// Every clip gets this many frames (capped at the video length).
    Fixed(usize),
}

/// Token budget of `k` full-resolution frames.
pub fn budget_tokens_for(k: usize, src_height: u32, src_width: u32, z: f64) -> u64 {
    tokens_for_pixels(k as u64 * src_height as u64 * src_width as u64, z)
}

/// Budget `B = ceil(K * H * W / Z)` for this sequence.
pub fn budget_tokens<T: Scalar>(cfg: &SelectionConfig, seq: &EmbeddingSequence<T>) -> u64 {
    budget_tokens_for(cfg.k, seq.src_height(), seq.src_width(), cfg.z)
}

/// Longest admissible clip, `max(1, floor(s_max^2 * K / anchors))`.
pub fn max_clip_length(cfg: &SelectionConfig, anchor_count: usize) -> usize {
    let raw = cfg.s_max * cfg.s_max * cfg.k as f64 / anchor_count.max(1) as f64;
    // Absorb representation error so that e.g. s_max = sqrt(2) gives 2K/A, not 2K/A - 1.
    ((raw + 1e-9).floor() as usize).max(1)
}

/// Inclusive window of `length` frames around `anchor`, shifted to stay inside `0..n`.
///
/// The extra frame of an even-length window goes after the anchor. Lengths
/// beyond `n` are capped at `n`.
pub fn clip_span(anchor: usize, length: usize, n: usize) -> (usize, usize) {
    let length = length.clamp(1, n.max(1));
    let before = (length - 1) / 2;
    let start = anchor.saturating_sub(before).min(n.max(1) - length);
    (start, start + length - 1)
}

/// Mean relevancy over `start..=end`.
pub fn clip_relevancy<T: Scalar>(curve: &SimilarityCurve<T>, start: usize, end: usize) -> T {
    let scores = &curve.scores()[start..=end];
    scores.iter().copied().sum::<T>() / T::of_usize(scores.len())
}

/// Mean pairwise cosine similarity between distinct frames of `start..=end`.
///
/// A single frame has no pairs and scores 0.
pub fn clip_redundancy<T: Scalar>(seq: &EmbeddingSequence<T>, start: usize, end: usize) -> T {
    let l = end - start + 1;
    if l < 2 {
        return T::zero();
    }
    let norms: Vec<T> = (start..=end).map(|i| l2_norm(seq.frame(i))).collect();
    let mut total = T::zero();
    for i in start..=end {
        for j in i + 1..=end {
            total = total + cosine_with(seq, i, j, norms[i - start], norms[j - start]);
        }
    }
    (total + total) / T::of_usize(l * (l - 1))
}

fn cosine_with<T: Scalar>(seq: &EmbeddingSequence<T>, i: usize, j: usize, ni: T, nj: T) -> T {
    let denom = ni * nj;
    if denom <= T::zero() {
        return T::zero();
    }
    (dot(seq.frame(i), seq.frame(j)) / denom).max(-T::one()).min(T::one())
}

/// One evaluated clip length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRecord<T> {
    pub length: usize,
    pub relevancy: T,
    pub redundancy: T,
    pub reward: T,
    pub objective: T,
}

/// Objective values for every length in `1..=l_max`, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTrace<T> {
    pub records: Vec<ObjectiveRecord<T>>,
}

impl<T: Scalar> ObjectiveTrace<T> {
    /// Smallest length attaining the maximal objective.
    pub fn best_length(&self) -> usize {
        let mut best = &self.records[0];
        for r in &self.records[1..] {
            if r.objective > best.objective {
                best = r;
            }
        }
        best.length
    }
}

/// Exhaustively scores every clip length in `1..=l_max` around `anchor` and
/// returns the smallest maximizer with the full trace.
///
/// `l_max` is capped at the sequence length.
pub fn optimize_clip_length<T: Scalar>(
    seq: &EmbeddingSequence<T>,
    curve: &SimilarityCurve<T>,
    anchor: usize,
    cfg: &SelectionConfig,
    l_max: usize,
) -> (usize, ObjectiveTrace<T>) {
    let n = seq.len();
    let l_max = l_max.clamp(1, n);
    let lambda_r = T::lit(cfg.lambda_r);
    let lambda_l = T::lit(cfg.lambda_l);
    let scores = curve.scores();

    // Windows are nested: each longer window adds exactly one frame on one side.
    let (lo, hi) = clip_span(anchor, l_max, n);
    let norms: Vec<T> = (lo..=hi).map(|i| l2_norm(seq.frame(i))).collect();
    let norm = |i: usize| norms[i - lo];

    let mut records = Vec::with_capacity(l_max);
    let (mut start, mut end) = clip_span(anchor, 1, n);
    let mut score_sum = scores[start];
    let mut pair_sum = T::zero();
    for l in 1..=l_max {
        if l > 1 {
            let (s, e) = clip_span(anchor, l, n);
            let added = if s < start { s } else { e };
            debug_assert!(s + 1 == start && e == end || s == start && e == end + 1);
            let cross: T = (start..=end).map(|j| cosine_with(seq, added, j, norm(added), norm(j))).sum();
            pair_sum = pair_sum + cross + cross;
            score_sum = score_sum + scores[added];
            start = s;
            end = e;
        }
        let relevancy = score_sum / T::of_usize(l);
        let redundancy = if l < 2 { T::zero() } else { pair_sum / T::of_usize(l * (l - 1)) };
        let reward = lambda_l * T::of_usize(l) / T::of_usize(l_max);
        records.push(ObjectiveRecord {
            length: l,
            relevancy,
            redundancy,
            reward,
            objective: relevancy - lambda_r * redundancy + reward,
        });
    }
    let trace = ObjectiveTrace { records };
    (trace.best_length(), trace)
}

/// Downscale factor that keeps a clip of `length` frames within its share of
/// the budget: `max(1, sqrt(anchors * length / K))`.
pub fn scale_for_length(length: usize, k: usize, anchor_count: usize) -> f64 {
    (anchor_count as f64 * length as f64 / k as f64).sqrt().max(1.0)
}

fn scaled_dim(src: u32, scale: f64, grid: u32) -> u32 {
    if src < grid {
        return src;
    }
    let cells = (src as f64 / scale / grid as f64).floor() as u32;
    cells.max(1) * grid
}

/// Frame size after downscaling by `scale`, rounded down to multiples of `grid`.
///
/// Dimensions are never below one grid cell, except that a source dimension
/// already smaller than the grid is kept as is.
pub fn output_dims(src_height: u32, src_width: u32, scale: f64, grid: u32) -> (u32, u32) {
    (scaled_dim(src_height, scale, grid), scaled_dim(src_width, scale, grid))
}

/// Builds a clip around `anchor` and prices it.
pub fn make_clip(
    anchor: usize,
    length: usize,
    n: usize,
    scale: f64,
    src_height: u32,
    src_width: u32,
    cfg: &SelectionConfig,
) -> KeyClip {
    let (start, end) = clip_span(anchor, length, n);
    let (out_height, out_width) = output_dims(src_height, src_width, scale, cfg.grid);
    let mut clip = KeyClip { anchor, start, end, length: end - start + 1, scale, out_width, out_height, tokens: 0 };
    clip.tokens = tokens_for_pixels(clip.pixels(), cfg.z);
    clip
}

/// Merges clips of identical output size whose spans share at least one frame.
///
/// The merged clip covers the union span and keeps the more relevant anchor
/// (earlier on ties). The result is sorted by start and is a fixpoint.
pub fn merge_clips<T: Scalar>(clips: &[KeyClip], curve: &SimilarityCurve<T>, z: f64) -> Vec<KeyClip> {
    let mut sorted = clips.to_vec();
    sorted.sort_by_key(|c| (c.out_height, c.out_width, c.start, c.end, c.anchor));
    let mut out: Vec<KeyClip> = Vec::with_capacity(sorted.len());
    for clip in sorted {
        match out.last_mut() {
            Some(prev) if prev.same_resolution(&clip) && clip.start <= prev.end => {
                prev.end = prev.end.max(clip.end);
                prev.length = prev.end - prev.start + 1;
                let (a, b) = (prev.anchor, clip.anchor);
                let (sa, sb) = (curve.get(a), curve.get(b));
                prev.anchor = if sb > sa || (sb == sa && b < a) { b } else { a };
                prev.tokens = tokens_for_pixels(prev.pixels(), z);
            }
            _ => out.push(clip),
        }
    }
    sort_clips(&mut out);
    out
}

fn sort_clips(clips: &mut [KeyClip]) {
    clips.sort_by_key(|c| (c.start, c.end, c.anchor, c.out_height, c.out_width));
}

/// Tokens for all frames encoded by `clips`, counting each clip's frames.
pub fn plan_tokens(clips: &[KeyClip], z: f64) -> u64 {
    tokens_for_pixels(clips.iter().map(KeyClip::pixels).sum(), z)
}

/// Full pipeline: relevancy, anchors, clip lengths, resolutions, merging.
pub fn plan<T: Scalar>(
    seq: &EmbeddingSequence<T>,
    query: &QueryEmbedding<T>,
    cfg: &SelectionConfig,
) -> Result<ClipPlan, PlanError> {
    let curve = relevancy_scores(seq, query)?;
    plan_from_curve(seq, &curve, cfg, LengthPolicy::Optimize)
}

/// Plans from a precomputed relevancy curve.
pub fn plan_from_curve<T: Scalar>(
    seq: &EmbeddingSequence<T>,
    curve: &SimilarityCurve<T>,
    cfg: &SelectionConfig,
    policy: LengthPolicy,
) -> Result<ClipPlan, PlanError> {
    cfg.validate()?;
    let n = seq.len();
    if curve.len() != n {
        return Err(PlanError::CurveLength { curve: curve.len(), frames: n });
    }
    let anchors = select_anchors(curve, cfg.k_anchor);
    let l_max = max_clip_length(cfg, anchors.len()).min(n);

    let mut lengths: Vec<(usize, usize)> = anchors
        .indices
        .par_iter()
        .map(|&a| match policy {
            LengthPolicy::Optimize => (a, optimize_clip_length(seq, curve, a, cfg, l_max).0),
            LengthPolicy::Fixed(l) => (a, l.clamp(1, n)),
        })
        .collect();

    let budget = budget_tokens(cfg, seq);
    loop {
        let count = lengths.len();
        let mut clips: Vec<KeyClip> = lengths
            .iter()
            .map(|&(a, l)| {
                let scale = scale_for_length(l, cfg.k, count);
                make_clip(a, l, n, scale, seq.src_height(), seq.src_width(), cfg)
            })
            .collect();
        sort_clips(&mut clips);
        if cfg.merge {
            clips = merge_clips(&clips, curve, cfg.z);
        }
        let total = plan_tokens(&clips, cfg.z);
        if total <= budget {
            return Ok(ClipPlan {
                label: seq.label().to_owned(),
                config: cfg.clone(),
                clips,
                total_tokens: total,
                budget_tokens: budget,
            });
        }
        // Only reachable when grid clamping enlarges frames past their share
        // (sources within a few grid cells, or k_anchor > k on tiny sources).
        if !shrink(&mut lengths, curve) {
            return Err(PlanError::BudgetViolation { total, budget });
        }
    }
}

/// Shortens the longest clip by one frame, or once every clip is a single
/// frame drops the least relevant anchor. Returns false if nothing is left to cut.
fn shrink<T: Scalar>(lengths: &mut Vec<(usize, usize)>, curve: &SimilarityCurve<T>) -> bool {
    if let Some(pos) =
        (0..lengths.len()).filter(|&i| lengths[i].1 > 1).reduce(|a, b| if lengths[b].1 > lengths[a].1 { b } else { a })
    {
        lengths[pos].1 -= 1;
        return true;
    }
    if lengths.len() <= 1 {
        return false;
    }
    let worst = (0..lengths.len())
        .reduce(|a, b| if curve.get(lengths[b].0) < curve.get(lengths[a].0) { b } else { a })
        .expect("non-empty");
    lengths.remove(worst);
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize) -> SelectionConfig {
        SelectionConfig::with_k(k)
    }

    fn axis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn seq_of(frames: Vec<Vec<f64>>, h: u32, w: u32) -> EmbeddingSequence<f64> {
        EmbeddingSequence::new(frames, 1.0, h, w, "t").unwrap()
    }

    #[test]
    fn budget_arithmetic() {
        assert_eq!(budget_tokens_for(8, 280, 280, 392.0), 1600);
        assert_eq!(budget_tokens_for(2, 768, 1024, 392.0), 4013);
        assert_eq!(budget_tokens_for(1, 28, 28, 392.0), 2);
    }

    #[test]
    fn l_max_cases() {
        assert_eq!(max_clip_length(&cfg(16), 16), 4);
        assert_eq!(max_clip_length(&SelectionConfig { s_max: 1.0, ..cfg(16) }, 16), 1);
        assert_eq!(max_clip_length(&cfg(16), 5), 12);
        assert_eq!(max_clip_length(&SelectionConfig { s_max: 2f64.sqrt(), ..cfg(16) }, 16), 2);
        assert_eq!(max_clip_length(&cfg(2), 16), 1);
    }

    #[test]
    fn spans() {
        assert_eq!(clip_span(10, 3, 100), (9, 11));
        assert_eq!(clip_span(0, 4, 100), (0, 3));
        assert_eq!(clip_span(10, 4, 100), (9, 12));
        assert_eq!(clip_span(99, 4, 100), (96, 99));
        assert_eq!(clip_span(1, 10, 5), (0, 4));
        assert_eq!(clip_span(0, 1, 1), (0, 0));
    }

    #[test]
    fn relevancy_means() {
        let c = SimilarityCurve::new(vec![0.2, 0.4, 0.9]).unwrap();
        assert_eq!(clip_relevancy(&c, 2, 2), 0.9);
        assert!((clip_relevancy(&c, 0, 1) - 0.3f64).abs() < 1e-15);
    }

    #[test]
    fn redundancy_cases() {
        let s = seq_of(vec![axis(3, 0), axis(3, 0), axis(3, 1)], 28, 28);
        assert!((clip_redundancy(&s, 0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(clip_redundancy(&s, 1, 2), 0.0);
        assert_eq!(clip_redundancy(&s, 2, 2), 0.0);
        // pairs: (0,1)=1, (0,2)=0, (1,2)=0 -> 2*1 / 6
        assert!((clip_redundancy(&s, 0, 2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_search() {
        let s = seq_of(vec![axis(2, 0); 5], 28, 28);
        let c = SimilarityCurve::new(vec![0.3; 5]).unwrap();
        let (l, trace) = optimize_clip_length(&s, &c, 2, &cfg(4), 1);
        assert_eq!(l, 1);
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn identical_frames_prefer_single_frame() {
        let s = seq_of(vec![axis(2, 0); 10], 28, 28);
        let c = SimilarityCurve::new(vec![0.4; 10]).unwrap();
        let (l, trace) = optimize_clip_length(&s, &c, 5, &cfg(4), 4);
        assert_eq!(l, 1);
        assert!((trace.records[0].objective - (0.4 + 0.0125)).abs() < 1e-12);
        for r in &trace.records[1..] {
            let expected = 0.4 - 0.5 + 0.05 * r.length as f64 / 4.0;
            assert!((r.objective - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn no_redundancy_penalty_takes_longest() {
        let s = seq_of(vec![axis(2, 0); 10], 28, 28);
        let c = SimilarityCurve::new(vec![0.4; 10]).unwrap();
        let cfg = SelectionConfig { lambda_r: 0.0, ..cfg(4) };
        assert_eq!(optimize_clip_length(&s, &c, 5, &cfg, 4).0, 4);
    }

    #[test]
    fn l_max_capped_by_length() {
        let s = seq_of(vec![axis(2, 0); 3], 28, 28);
        let c = SimilarityCurve::new(vec![0.4; 3]).unwrap();
        let (_, trace) = optimize_clip_length(&s, &c, 1, &cfg(4), 10);
        assert_eq!(trace.records.len(), 3);
    }

    #[test]
    fn scales() {
        assert_eq!(scale_for_length(4, 16, 16), 2.0);
        assert_eq!(scale_for_length(1, 16, 16), 1.0);
        assert!((scale_for_length(2, 16, 16) - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(scale_for_length(1, 16, 4), 1.0);
    }

    #[test]
    fn dims() {
        assert_eq!(output_dims(1024, 768, 2.0, 28), (504, 364));
        assert_eq!(output_dims(560, 280, 1.0, 28), (560, 280));
        assert_eq!(output_dims(10, 10, 2.0, 28), (10, 10));
        assert_eq!(output_dims(40, 10, 2.0, 28), (28, 10));
        assert_eq!(output_dims(1024, 768, 2f64.sqrt(), 28), (700, 532));
    }

    fn clip(anchor: usize, start: usize, end: usize, side: u32) -> KeyClip {
        let mut c = KeyClip {
            anchor,
            start,
            end,
            length: end - start + 1,
            scale: 1.0,
            out_width: side,
            out_height: side,
            tokens: 0,
        };
        c.tokens = tokens_for_pixels(c.pixels(), 392.0);
        c
    }

    #[test]
    fn merge_overlapping_equal_dims() {
        let mut scores = vec![0.0; 20];
        scores[11] = 0.5;
        scores[14] = 0.7;
        let curve = SimilarityCurve::new(scores).unwrap();
        let merged = merge_clips(&[clip(11, 10, 13, 28), clip(14, 12, 15, 28)], &curve, 392.0);
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].start, merged[0].end, merged[0].length), (10, 15, 6));
        assert_eq!(merged[0].anchor, 14);
        assert_eq!(merged[0].tokens, 12);
    }

    #[test]
    fn merge_keeps_different_dims_and_disjoint() {
        let curve = SimilarityCurve::new(vec![0.0; 30]).unwrap();
        let a = [clip(11, 10, 13, 28), clip(14, 12, 15, 56)];
        assert_eq!(merge_clips(&a, &curve, 392.0), a.to_vec());
        let b = [clip(11, 10, 13, 28), clip(20, 19, 22, 28)];
        assert_eq!(merge_clips(&b, &curve, 392.0), b.to_vec());
        // adjacency without a shared frame is not an overlap
        let c = [clip(11, 10, 13, 28), clip(15, 14, 16, 28)];
        assert_eq!(merge_clips(&c, &curve, 392.0).len(), 2);
    }

    #[test]
    fn merge_chains_to_fixpoint() {
        let curve = SimilarityCurve::new(vec![0.0; 30]).unwrap();
        let a = [clip(1, 0, 3, 28), clip(4, 3, 6, 28), clip(7, 6, 9, 28)];
        let m = merge_clips(&a, &curve, 392.0);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].start, m[0].end), (0, 9));
        assert_eq!(merge_clips(&m, &curve, 392.0), m);
    }

    #[test]
    fn constant_curve_plan_is_one_full_res_frame() {
        let s = seq_of(vec![axis(2, 0); 30], 280, 280);
        let c = SimilarityCurve::new(vec![0.5; 30]).unwrap();
        let p = plan_from_curve(&s, &c, &cfg(16), LengthPolicy::Optimize).unwrap();
        assert_eq!(p.clips.len(), 1);
        let only = &p.clips[0];
        assert_eq!((only.anchor, only.length, only.scale), (0, 1, 1.0));
        assert_eq!((only.out_height, only.out_width), (280, 280));
        assert!(p.total_tokens <= p.budget_tokens);
    }

    #[test]
    fn watershed_curve_with_unit_s_max() {
        let trace = [0.1, 0.9, 0.2, 0.8, 0.1, 0.7];
        let s = seq_of((0..6).map(|i| axis(6, i)).collect(), 280, 280);
        let c = SimilarityCurve::new(trace.to_vec()).unwrap();
        let cfg = SelectionConfig { s_max: 1.0, ..cfg(3) };
        let p = plan_from_curve(&s, &c, &cfg, LengthPolicy::Optimize).unwrap();
        assert_eq!(p.anchors(), vec![1, 3, 5]);
        for clip in &p.clips {
            assert_eq!((clip.length, clip.scale, clip.out_height), (1, 1.0, 280));
        }
        assert_eq!(p.total_tokens, p.budget_tokens);
    }

    #[test]
    fn tiny_source_stays_within_budget() {
        let trace = [0.1, 0.9, 0.2, 0.8, 0.1, 0.7, 0.0, 0.6];
        let s = seq_of((0..8).map(|i| axis(8, i)).collect(), 10, 10);
        let c = SimilarityCurve::new(trace.to_vec()).unwrap();
        let cfg = SelectionConfig { k_anchor: 8, ..cfg(1) };
        let p = plan_from_curve(&s, &c, &cfg, LengthPolicy::Optimize).unwrap();
        // 4 peaks at 100 px each need 2 tokens against a budget of 1; the
        // least relevant one (index 7) is dropped.
        assert_eq!(p.budget_tokens, 1);
        assert_eq!(p.total_tokens, 1);
        assert_eq!(p.anchors(), vec![1, 3, 5]);
    }

    #[test]
    fn curve_length_mismatch() {
        let s = seq_of(vec![axis(2, 0); 3], 28, 28);
        let c = SimilarityCurve::new(vec![0.1; 4]).unwrap();
        assert!(matches!(plan_from_curve(&s, &c, &cfg(2), LengthPolicy::Optimize), Err(PlanError::CurveLength { .. })));
    }
}
