//! Domain types: embedding sequences, query vectors, relevancy curves,
//! selection configuration, and clip plans.

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::{l2_norm, Scalar};

/// Allowed deviation of an embedding's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Allowed overshoot of a relevancy score beyond [-1, 1].
pub const SCORE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("embedding sequence is empty")]
    EmptySequence,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("vector {index} has norm {norm}, outside 1 ± {NORM_TOLERANCE}")]
    NormViolation { index: usize, norm: f64 },
    #[error("fps must be positive and finite, got {0}")]
    InvalidFps(f64),
    #[error("source resolution must be at least 1x1, got {height}x{width}")]
    InvalidResolution { height: u32, width: u32 },
    #[error("score {score} at index {index} is outside [-1, 1]")]
    ScoreOutOfRange { index: usize, score: f64 },
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
}

fn check_unit_norm<T: Scalar>(v: &[T], index: usize) -> Result<(), ModelError> {
    let norm = l2_norm(v).as_f64();
    if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(ModelError::NormViolation { index, norm });
    }
    Ok(())
}

/// N unit-norm frame embeddings of dimension D plus source-video metadata.
///
/// Frames are stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence<T> {
    data: Vec<T>,
    len: usize,
    dim: usize,
    fps: f32,
    src_height: u32,
    src_width: u32,
    label: String,
}

impl<T: Scalar> EmbeddingSequence<T> {
    /// Builds and validates a sequence from per-frame vectors.
    pub fn new(
        frames: Vec<Vec<T>>,
        fps: f32,
        src_height: u32,
        src_width: u32,
        label: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let len = frames.len();
        let dim = frames.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(len * dim);
        for row in frames {
            if row.len() != dim {
                return Err(ModelError::DimMismatch { expected: dim, found: row.len() });
            }
            data.extend(row);
        }
        Self::from_flat(data, len, dim, fps, src_height, src_width, label)
    }

    /// Builds and validates a sequence from a row-major buffer of `len * dim` values.
    pub fn from_flat(
        data: Vec<T>,
        len: usize,
        dim: usize,
        fps: f32,
        src_height: u32,
        src_width: u32,
        label: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if data.len() != len * dim {
            return Err(ModelError::DimMismatch { expected: len * dim, found: data.len() });
        }
        let seq = Self { data, len, dim, fps, src_height, src_width, label: label.into() };
        seq.validate()?;
        Ok(seq)
    }

    /// Checks every sequence invariant.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.len == 0 {
            return Err(ModelError::EmptySequence);
        }
        if self.dim == 0 {
            return Err(ModelError::DimMismatch { expected: 1, found: 0 });
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(ModelError::InvalidFps(self.fps as f64));
        }
        if self.src_height == 0 || self.src_width == 0 {
            return Err(ModelError::InvalidResolution { height: self.src_height, width: self.src_width });
        }
        for (i, row) in self.frames().enumerate() {
            check_unit_norm(row, i)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn src_height(&self) -> u32 {
        self.src_height
    }

    pub fn src_width(&self) -> u32 {
        self.src_width
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Embedding of frame `i`.
    pub fn frame(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Row-major view of all embeddings.
    pub fn as_flat(&self) -> &[T] {
        &self.data
    }
}

/// Checks the invariants of an embedding sequence.
pub fn validate_sequence<T: Scalar>(seq: &EmbeddingSequence<T>) -> Result<(), ModelError> {
    seq.validate()
}

/// Unit-norm embedding of the text query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding<T> {
    vector: Vec<T>,
}

impl<T: Scalar> QueryEmbedding<T> {
    pub fn new(vector: Vec<T>) -> Result<Self, ModelError> {
        if vector.is_empty() {
            return Err(ModelError::DimMismatch { expected: 1, found: 0 });
        }
        check_unit_norm(&vector, 0)?;
        Ok(Self { vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.vector
    }
}

/// Per-frame relevancy of each frame to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityCurve<T> {
    scores: Vec<T>,
}

impl<T: Scalar> SimilarityCurve<T> {
    /// Wraps scores after checking each lies in [-1, 1] up to [`SCORE_TOLERANCE`].
    pub fn new(scores: Vec<T>) -> Result<Self, ModelError> {
        let bound = 1.0 + SCORE_TOLERANCE;
        for (index, s) in scores.iter().enumerate() {
            let v = s.as_f64();
            if v.is_nan() || v.abs() > bound {
                return Err(ModelError::ScoreOutOfRange { index, score: v });
            }
        }
        Ok(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn get(&self, i: usize) -> T {
        self.scores[i]
    }

    /// Index of the highest score, earliest on ties. `None` for an empty curve.
    pub fn argmax(&self) -> Option<usize> {
        argmax_in(&self.scores, 0..self.scores.len())
    }
}

/// Earliest index of the maximum over `range`.
pub(crate) fn argmax_in<T: Scalar>(scores: &[T], range: std::ops::Range<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in range {
        match best {
            Some(b) if scores[i] <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Knobs of the selection engine. Defaults reproduce the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Full-resolution frame budget K.
    pub k: usize,
    /// Number of anchor key frames.
    pub k_anchor: usize,
    /// Largest spatial downscale factor.
    pub s_max: f64,
    /// Redundancy penalty weight.
    pub lambda_r: f64,
    /// Clip-length reward weight.
    pub lambda_l: f64,
    /// Pixels per visual token.
    pub z: f64,
    /// Output dimensions are multiples of this many pixels.
    pub grid: u32,
    pub seed: u64,
    /// Merge overlapping clips of identical resolution.
    pub merge: bool,
}

impl SelectionConfig {
    pub const DEFAULT_K: usize = 16;
    pub const DEFAULT_S_MAX: f64 = 2.0;
    pub const DEFAULT_LAMBDA_R: f64 = 0.5;
    pub const DEFAULT_LAMBDA_L: f64 = 0.05;
    pub const DEFAULT_Z: f64 = 392.0;
    pub const DEFAULT_GRID: u32 = 28;

    /// Default configuration for a budget of `k` frames (`k_anchor = k`).
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            k_anchor: k,
            s_max: Self::DEFAULT_S_MAX,
            lambda_r: Self::DEFAULT_LAMBDA_R,
            lambda_l: Self::DEFAULT_LAMBDA_L,
            z: Self::DEFAULT_Z,
            grid: Self::DEFAULT_GRID,
            seed: 0,
            merge: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: &str| Err(ModelError::InvalidConfig(msg.to_owned()));
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if self.k_anchor == 0 {
            return fail("k_anchor must be at least 1");
        }
        if !(self.s_max.is_finite() && self.s_max >= 1.0) {
            return fail("s_max must be finite and at least 1");
        }
        if !(self.lambda_r.is_finite() && self.lambda_r >= 0.0) {
            return fail("lambda_r must be finite and non-negative");
        }
        if !(self.lambda_l.is_finite() && self.lambda_l >= 0.0) {
            return fail("lambda_l must be finite and non-negative");
        }
        if !(self.z.is_finite() && self.z > 0.0) {
            return fail("z must be finite and positive");
        }
        if self.grid == 0 {
            return fail("grid must be at least 1");
        }
        Ok(())
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self::with_k(Self::DEFAULT_K)
    }
}

/// Tokens needed to encode `pixels` pixels at `z` pixels per token, rounded up.
///
/// Integral `z` is handled in exact integer arithmetic.
pub fn tokens_for_pixels(pixels: u64, z: f64) -> u64 {
    if z.fract() == 0.0 && z >= 1.0 && z <= u64::MAX as f64 {
        pixels.div_ceil(z as u64)
    } else {
        (pixels as f64 / z).ceil() as u64
    }
}

fn serialize_scale<S: Serializer>(scale: &f64, s: S) -> Result<S::Ok, S::Error> {
    let raw = serde_json::value::RawValue::from_string(format!("{scale:.6}")).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

/// A temporally contiguous window of frames around an anchor, encoded at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyClip {
    pub anchor: usize,
    /// First frame, inclusive.
    pub start: usize,
    /// Last frame, inclusive.
    pub end: usize,
    pub length: usize,
    /// Spatial downscale factor (>= 1).
    #[serde(serialize_with = "serialize_scale")]
    pub scale: f64,
    pub out_width: u32,
    pub out_height: u32,
    pub tokens: u64,
}

impl KeyClip {
    pub fn pixels_per_frame(&self) -> u64 {
        self.out_height as u64 * self.out_width as u64
    }

    /// Pixels encoded for the whole clip.
    pub fn pixels(&self) -> u64 {
        self.length as u64 * self.pixels_per_frame()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame <= self.end
    }

    pub fn same_resolution(&self, other: &KeyClip) -> bool {
        self.out_height == other.out_height && self.out_width == other.out_width
    }
}

/// Token-budgeted set of key clips for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPlan {
    pub label: String,
    pub config: SelectionConfig,
    /// Clips sorted by start frame.
    pub clips: Vec<KeyClip>,
    /// Tokens for all encoded frames: pixels summed over clips, divided by Z, rounded up.
    pub total_tokens: u64,
    /// Budget B of K full-resolution frames.
    pub budget_tokens: u64,
}

impl ClipPlan {
    /// Encoded frame instances (a frame shared by two clips counts twice).
    pub fn encoded_frames(&self) -> usize {
        self.clips.iter().map(|c| c.length).sum()
    }

    /// Number of distinct frame indices touched by any clip.
    pub fn distinct_frames(&self) -> usize {
        let mut frames: Vec<usize> = self.clips.iter().flat_map(|c| c.start..=c.end).collect();
        frames.sort_unstable();
        frames.dedup();
        frames.len()
    }

    pub fn anchors(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.anchor).collect()
    }

    /// Serializes to the plan JSON layout (pretty-printed, trailing newline).
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("plan serialization is infallible");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
