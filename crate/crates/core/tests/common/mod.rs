//! Independent reference implementations used to cross-check the engine.
#![allow(dead_code)]

use keyclip::{EmbeddingSequence, SelectionConfig, SimilarityCurve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Nominal window around `k`, then slid back inside `[0, n)`.
pub fn oracle_span(k: usize, l: usize, n: usize) -> (usize, usize) {
    let mut start = k as i64 - ((l as i64 - 1) / 2);
    let mut end = k as i64 + (l as i64 - 1 + 1) / 2;
    if start < 0 {
        end -= start;
        start = 0;
    }
    if end > n as i64 - 1 {
        start -= end - (n as i64 - 1);
        end = n as i64 - 1;
    }
    (start as usize, end as usize)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Direct evaluation of the clip objective for every length; returns
/// (smallest argmax, objective values).
pub fn oracle_objective(
    seq: &EmbeddingSequence<f64>,
    curve: &SimilarityCurve<f64>,
    anchor: usize,
    lambda_r: f64,
    lambda_l: f64,
    l_max: usize,
) -> (usize, Vec<f64>) {
    let n = seq.len();
    let l_max = l_max.min(n).max(1);
    let mut values = Vec::new();
    for l in 1..=l_max {
        let (s, e) = oracle_span(anchor, l, n);
        assert_eq!(e + 1 - s, l);
        let rel: f64 = (s..=e).map(|i| curve.get(i)).sum::<f64>() / l as f64;
        let mut pairs = 0.0;
        for i in s..=e {
            for j in s..=e {
                if i != j {
                    pairs += cos(seq.frame(i), seq.frame(j));
                }
            }
        }
        let red = if l == 1 { 0.0 } else { pairs / (l * (l - 1)) as f64 };
        values.push(rel - lambda_r * red + lambda_l * l as f64 / l_max as f64);
    }
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    (best + 1, values)
}

/// Frame-by-frame CDF walk for the inverse-transform-sampling selector.
pub fn oracle_its(scores: &[f64], k: usize, alpha: f64) -> Vec<usize> {
    let n = scores.len();
    if k >= n {
        return (0..n).collect();
    }
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|&r| if hi > lo { ((r - lo) / (hi - lo)).powf(alpha) } else { 1.0 }).collect();
    let total: f64 = w.iter().sum();
    let mut chosen: Vec<usize> = Vec::new();
    for j in 0..k {
        let q = (2 * j + 1) as f64 * total;
        let mut acc = 0.0;
        let mut hit = n - 1;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if acc * (2 * k) as f64 > q {
                hit = i;
                break;
            }
        }
        let mut i = hit;
        while i < n && chosen.contains(&i) {
            i += 1;
        }
        if i == n {
            i = hit;
            while chosen.contains(&i) {
                i -= 1;
            }
        }
        chosen.push(i);
    }
    chosen.sort();
    chosen
}

/// Random unit vectors drifting slowly, so neighbouring frames are similar.
pub fn drifting_sequence(n: usize, dim: usize, drift: f64, seed: u64, h: u32, w: u32) -> EmbeddingSequence<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        for x in cur.iter_mut() {
            *x += drift * rng.gen_range(-1.0..1.0);
        }
        let norm = cur.iter().map(|x| x * x).sum::<f64>().sqrt();
        frames.push(cur.iter().map(|x| x / norm).collect::<Vec<f64>>());
    }
    EmbeddingSequence::new(frames, 1.0, h, w, format!("drift-{seed}")).unwrap()
}

/// Independent random unit frames: pairwise cosine near zero.
pub fn independent_sequence(n: usize, dim: usize, seed: u64, h: u32, w: u32) -> EmbeddingSequence<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    EmbeddingSequence::new(frames, 1.0, h, w, format!("independent-{seed}")).unwrap()
}

/// Recomputes a plan's token count by walking every frame of every clip.
pub fn oracle_plan_tokens(plan: &keyclip::ClipPlan) -> u64 {
    let mut pixels: u128 = 0;
    for clip in &plan.clips {
        for _frame in clip.start..=clip.end {
            pixels += clip.out_height as u128 * clip.out_width as u128;
        }
    }
    ceil_div(pixels, plan.config.z)
}

pub fn ceil_div(pixels: u128, z: f64) -> u64 {
    if z.fract() == 0.0 {
        let z = z as u128;
        pixels.div_ceil(z) as u64
    } else {
        (pixels as f64 / z).ceil() as u64
    }
}

pub fn oracle_budget(cfg: &SelectionConfig, h: u32, w: u32) -> u64 {
    ceil_div(cfg.k as u128 * h as u128 * w as u128, cfg.z)
}
