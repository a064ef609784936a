//! Evaluation harness: synthetic videos with planted evidence events,
//! coverage metrics, token accounting, and configuration sweeps.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{its_select, topk_select, uniform_select, watershed_select, FrameSelection};
use crate::model::{tokens_for_pixels, ClipPlan, EmbeddingSequence, QueryEmbedding, SelectionConfig, SimilarityCurve};
use crate::planner::{budget_tokens_for, output_dims, plan_from_curve, LengthPolicy, PlanError};
use crate::scalar::Scalar;

/// Planted evidence events and the tolerance within which a frame covers one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub event_centers: Vec<usize>,
    /// Half-width of the covering window, in frames.
    pub window: usize,
}

impl GroundTruth {
    pub const DEFAULT_WINDOW: usize = 2;

    pub fn new(mut event_centers: Vec<usize>, window: usize) -> Self {
        event_centers.sort_unstable();
        Self { event_centers, window }
    }
}

/// Relevancy curve of bumps `amp * exp(-(i - c)^2 / (2 width^2))` per event
/// plus seeded Gaussian noise, clipped to [-1, 1].
pub fn synth_curve<T: Scalar>(
    n: usize,
    event_centers: &[usize],
    amp: f64,
    width: f64,
    noise_sigma: f64,
    seed: u64,
) -> SimilarityCurve<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("sigma is finite and non-negative");
    let scores = (0..n)
        .map(|i| {
            let bumps: f64 = event_centers
                .iter()
                .map(|&c| {
                    let d = i as f64 - c as f64;
                    amp * (-d * d / (2.0 * width * width)).exp()
                })
                .sum();
            let eps = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            T::lit((bumps + eps).clamp(-1.0, 1.0))
        })
        .collect();
    SimilarityCurve::new(scores).expect("scores are clipped to [-1, 1]")
}

/// Source-video metadata attached to synthetic sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMeta {
    pub fps: f32,
    pub height: u32,
    pub width: u32,
    pub label: String,
}

impl Default for SourceMeta {
    fn default() -> Self {
        Self { fps: 1.0, height: 448, width: 448, label: "synthetic".to_owned() }
    }
}

/// Embeddings whose relevancy against the returned query is `curve`.
///
/// The query is the first basis vector; frame `i` is `r_i q + sqrt(1 - r_i^2) u_i`
/// with `u_i` a seeded random unit vector in the complement of `q`.
pub fn synth_embeddings<T: Scalar>(
    curve: &SimilarityCurve<T>,
    dim: usize,
    seed: u64,
    meta: &SourceMeta,
) -> (EmbeddingSequence<T>, QueryEmbedding<T>) {
    assert!(dim >= 2, "synthetic embeddings need at least two dimensions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(curve.len() * dim);
    for &r in curve.scores() {
        let r = r.as_f64().clamp(-1.0, 1.0);
        let u: Vec<f64> = loop {
            let u: Vec<f64> = (1..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if u.iter().any(|x| *x != 0.0) {
                break u;
            }
        };
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let side = (1.0 - r * r).max(0.0).sqrt();
        data.push(T::lit(r));
        data.extend(u.iter().map(|x| T::lit(side * x / norm)));
    }
    let mut q = vec![T::zero(); dim];
    q[0] = T::one();
    let seq =
        EmbeddingSequence::from_flat(data, curve.len(), dim, meta.fps, meta.height, meta.width, meta.label.clone())
            .expect("synthetic frames are unit norm");
    (seq, QueryEmbedding::new(q).expect("basis vector is unit norm"))
}

/// Frames a policy put in front of the model, and the anchors it chose.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Picked {
    /// Sorted distinct frames.
    pub frames: Vec<usize>,
    pub anchors: Vec<usize>,
}

impl From<&ClipPlan> for Picked {
    fn from(plan: &ClipPlan) -> Self {
        let mut frames: Vec<usize> = plan.clips.iter().flat_map(|c| c.start..=c.end).collect();
        frames.sort_unstable();
        frames.dedup();
        Self { frames, anchors: plan.anchors() }
    }
}

impl From<&FrameSelection> for Picked {
    fn from(sel: &FrameSelection) -> Self {
        Self { frames: sel.indices.clone(), anchors: sel.indices.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Fraction of events with a picked frame within the window.
    pub event_coverage: f64,
    /// Fraction of anchors within the window of some event.
    pub anchor_recall: f64,
}

fn near_any(sorted: &[usize], x: usize, window: usize) -> bool {
    let lo = x.saturating_sub(window);
    let i = sorted.partition_point(|&f| f < lo);
    sorted.get(i).is_some_and(|&f| f <= x + window)
}

pub fn coverage(picked: &Picked, gt: &GroundTruth) -> Coverage {
    let mut frames = picked.frames.clone();
    frames.sort_unstable();
    let hit = gt.event_centers.iter().filter(|&&c| near_any(&frames, c, gt.window)).count();
    let recalled = picked.anchors.iter().filter(|&&a| near_any(&gt.event_centers, a, gt.window)).count();
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Coverage { event_coverage: frac(hit, gt.event_centers.len()), anchor_recall: frac(recalled, picked.anchors.len()) }
}

/// One line of a token accounting table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub policy: String,
    pub budget_tokens: u64,
    pub total_tokens: u64,
    pub encoded_frames: usize,
    pub distinct_frames: usize,
    /// `total_tokens` minus the baseline's.
    pub delta_tokens: i64,
    /// Relative delta, e.g. `-14.8%`.
    pub delta_pct: String,
}

fn percent(delta: i64, base: u64) -> String {
    if delta == 0 || base == 0 {
        return "0.0%".to_owned();
    }
    format!("{:+.1}%", 100.0 * delta as f64 / base as f64)
}

/// Token use of each named plan relative to the plan named `baseline`.
///
/// Returns `None` if no plan carries the baseline name.
pub fn token_report(plans: &[(String, ClipPlan)], baseline: &str) -> Option<Vec<TokenRow>> {
    let base = plans.iter().find(|(name, _)| name == baseline)?.1.total_tokens;
    Some(
        plans
            .iter()
            .map(|(name, p)| {
                let delta = p.total_tokens as i64 - base as i64;
                TokenRow {
                    policy: name.clone(),
                    budget_tokens: p.budget_tokens,
                    total_tokens: p.total_tokens,
                    encoded_frames: p.encoded_frames(),
                    distinct_frames: p.distinct_frames(),
                    delta_tokens: delta,
                    delta_pct: percent(delta, base),
                }
            })
            .collect(),
    )
}

pub fn token_report_csv(rows: &[TokenRow]) -> String {
    let mut out =
        String::from("policy,budget_tokens,total_tokens,encoded_frames,distinct_frames,delta_tokens,delta_pct\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.policy, r.budget_tokens, r.total_tokens, r.encoded_frames, r.distinct_frames, r.delta_tokens, r.delta_pct
        )
        .unwrap();
    }
    out
}

/// Selection policy evaluated by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Adaptive key clips.
    KeyClips,
    Uniform,
    TopK,
    Its {
        alpha: f64,
    },
    Watershed,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::KeyClips => "key_clips",
            Policy::Uniform => "uniform",
            Policy::TopK => "topk",
            Policy::Its { .. } => "its",
            Policy::Watershed => "watershed",
        }
    }
}

/// Shape of the synthetic instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub n: usize,
    pub events: usize,
    pub amp: f64,
    pub width: f64,
    pub noise_sigma: f64,
    pub window: usize,
    pub dim: usize,
    pub src_height: u32,
    pub src_width: u32,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            n: 1800,
            events: 3,
            amp: 0.6,
            width: 10.0,
            noise_sigma: 0.05,
            window: GroundTruth::DEFAULT_WINDOW,
            dim: 16,
            src_height: 448,
            src_width: 448,
        }
    }
}

/// A generated video, its query, and its ground truth.
#[derive(Debug, Clone)]
pub struct Instance {
    pub curve: SimilarityCurve<f64>,
    pub sequence: EmbeddingSequence<f64>,
    pub query: QueryEmbedding<f64>,
    pub truth: GroundTruth,
}

/// Deterministically builds the instance for `seed`.
pub fn make_instance(params: &InstanceParams, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = params.events.min(params.n);
    let centers = sample(&mut rng, params.n, events).into_vec();
    let truth = GroundTruth::new(centers, params.window);
    let curve = synth_curve(
        params.n,
        &truth.event_centers,
        params.amp,
        params.width,
        params.noise_sigma,
        seed ^ 0x5851_f42d_4c95_7f2d,
    );
    let meta = SourceMeta {
        height: params.src_height,
        width: params.src_width,
        label: format!("synthetic-{seed}"),
        ..SourceMeta::default()
    };
    let (sequence, query) = synth_embeddings(&curve, params.dim, seed ^ 0x1405_7b7e_f767_814f, &meta);
    Instance { curve, sequence, query, truth }
}

/// Outcome of one policy on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub coverage: Coverage,
    pub tokens: u64,
    pub budget_tokens: u64,
}

/// Anchor count for a ratio of `k`, at least 1.
pub fn anchors_for_ratio(k: usize, ratio: f64) -> usize {
    ((k as f64 * ratio).round() as usize).max(1)
}

/// Runs `policy` at budget `k` on `inst`.
pub fn evaluate(policy: Policy, k: usize, k_anchor: usize, inst: &Instance) -> Result<RunResult, PlanError> {
    let seq = &inst.sequence;
    let (h, w) = (seq.src_height(), seq.src_width());
    let cfg = SelectionConfig { k_anchor, ..SelectionConfig::with_k(k) };
    let budget = budget_tokens_for(k, h, w, cfg.z);
    let selection = match policy {
        Policy::KeyClips => {
            let plan = plan_from_curve(seq, &inst.curve, &cfg, LengthPolicy::Optimize)?;
            return Ok(RunResult {
                coverage: coverage(&Picked::from(&plan), &inst.truth),
                tokens: plan.total_tokens,
                budget_tokens: plan.budget_tokens,
            });
        }
        Policy::Uniform => uniform_select(seq.len(), k),
        Policy::TopK => topk_select(&inst.curve, k),
        Policy::Its { alpha } => its_select(&inst.curve, k, alpha),
        Policy::Watershed => watershed_select(&inst.curve, k),
    };
    let (oh, ow) = output_dims(h, w, 1.0, cfg.grid);
    let tokens = tokens_for_pixels(selection.len() as u64 * oh as u64 * ow as u64, cfg.z);
    Ok(RunResult { coverage: coverage(&Picked::from(&selection), &inst.truth), tokens, budget_tokens: budget })
}

/// Axes of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub policies: Vec<Policy>,
    pub ks: Vec<usize>,
    pub anchor_ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub instance: InstanceParams,
}

/// Aggregate over seeds for one (policy, K, ratio) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub k: usize,
    pub anchor_ratio: f64,
    pub k_anchor: usize,
    pub runs: usize,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub tokens_mean: f64,
    pub budget_tokens_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instance: InstanceParams,
    pub rows: Vec<SweepRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluates the Cartesian product of policies, budgets, and anchor ratios.
///
/// Every cell sees the same instances (one per seed). Runs execute in
/// parallel; results are aggregated in seed order.
pub fn sweep(cfg: &SweepConfig) -> Result<EvalReport, PlanError> {
    let instances: Vec<Instance> = cfg.seeds.par_iter().map(|&s| make_instance(&cfg.instance, s)).collect();
    let mut rows = Vec::new();
    for policy in &cfg.policies {
        for &k in &cfg.ks {
            for &ratio in &cfg.anchor_ratios {
                let k_anchor = anchors_for_ratio(k, ratio);
                let runs: Vec<RunResult> =
                    instances.par_iter().map(|inst| evaluate(*policy, k, k_anchor, inst)).collect::<Result<_, _>>()?;
                let pick = |f: fn(&RunResult) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
                let (coverage_mean, coverage_std) = mean_std(&pick(|r| r.coverage.event_coverage));
                let (recall_mean, recall_std) = mean_std(&pick(|r| r.coverage.anchor_recall));
                let (tokens_mean, _) = mean_std(&pick(|r| r.tokens as f64));
                let (budget_tokens_mean, _) = mean_std(&pick(|r| r.budget_tokens as f64));
                rows.push(SweepRow {
                    policy: policy.name().to_owned(),
                    k,
                    anchor_ratio: ratio,
                    k_anchor,
                    runs: runs.len(),
                    coverage_mean,
                    coverage_std,
                    recall_mean,
                    recall_std,
                    tokens_mean,
                    budget_tokens_mean,
                });
            }
        }
    }
    Ok(EvalReport { instance: cfg.instance.clone(), rows })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "policy,k,anchor_ratio,k_anchor,runs,coverage_mean,coverage_std,recall_mean,recall_std,tokens_mean,budget_tokens_mean\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3}",
                r.policy,
                r.k,
                r.anchor_ratio,
                r.k_anchor,
                r.runs,
                r.coverage_mean,
                r.coverage_std,
                r.recall_mean,
                r.recall_std,
                r.tokens_mean,
                r.budget_tokens_mean
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serialization is infallible");
        out.push('\n');
        out
    }
}

/// One-sided exact sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let ln_choose = |k: usize| -> f64 { (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum() };
    let half_n = n as f64 * std::f64::consts::LN_2;
    (wins..=n).map(|k| (ln_choose(k) - half_n).exp()).sum::<f64>().min(1.0)
}
