//! Frame-to-query relevancy curve.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{EmbeddingSequence, ModelError, QueryEmbedding, SimilarityCurve};
use crate::scalar::{dot, l2_norm, Scalar};

#[derive(Debug, Error)]
pub enum RelevanceError {
    #[error("query dimension {query} does not match frame dimension {frames}")]
    DimMismatch { query: usize, frames: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cosine similarity of two vectors, clamped to [-1, 1].
///
/// For unit-norm inputs this is the dot product up to rounding.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let denom = l2_norm(a) * l2_norm(b);
    if denom <= T::zero() {
        return T::zero();
    }
    (dot(a, b) / denom).max(-T::one()).min(T::one())
}

/// Cosine similarity of every frame with the query, in frame order.
pub fn relevancy_scores<T: Scalar>(
    seq: &EmbeddingSequence<T>,
    query: &QueryEmbedding<T>,
) -> Result<SimilarityCurve<T>, RelevanceError> {
    if seq.dim() != query.dim() {
        return Err(RelevanceError::DimMismatch { query: query.dim(), frames: seq.dim() });
    }
    let q = query.as_slice();
    let scores: Vec<T> = seq.as_flat().par_chunks_exact(seq.dim()).map(|f| cosine(f, q)).collect();
    Ok(SimilarityCurve::new(scores)?)
}

/// Renders the curve as CSV: header `index,score`, then one row per frame.
pub fn curve_csv<T: Scalar>(curve: &SimilarityCurve<T>) -> String {
    let mut out = String::with_capacity(16 * (curve.len() + 1));
    out.push_str("index,score\n");
    for (i, s) in curve.scores().iter().enumerate() {
        writeln!(out, "{i},{:.9}", s.as_f64()).unwrap();
    }
    out
}

pub fn export_curve_csv<T: Scalar>(curve: &SimilarityCurve<T>, path: impl AsRef<Path>) -> Result<(), RelevanceError> {
    std::fs::write(path, curve_csv(curve))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normalize(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn identical_and_orthogonal() {
        let seq = EmbeddingSequence::new(vec![vec![0.6, 0.8, 0.0], vec![0.0, 0.0, 1.0]], 1.0, 4, 4, "").unwrap();
        let q = QueryEmbedding::new(vec![0.6, 0.8, 0.0]).unwrap();
        let c = relevancy_scores(&seq, &q).unwrap();
        assert!((c.get(0) - 1.0f64).abs() < 1e-12);
        assert_eq!(c.get(1), 0.0);
    }

    #[test]
    fn seeded_pair_matches_hand_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = normalize((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let q = normalize((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let expected = f[0] * q[0] + f[1] * q[1] + f[2] * q[2] + f[3] * q[3];
        let seq = EmbeddingSequence::new(vec![f], 1.0, 1, 1, "").unwrap();
        let c = relevancy_scores(&seq, &QueryEmbedding::new(q).unwrap()).unwrap();
        assert!((c.get(0) - expected).abs() < 1e-12);
    }

    #[test]
    fn dim_mismatch() {
        let seq = EmbeddingSequence::new(vec![vec![1.0, 0.0]], 1.0, 1, 1, "").unwrap();
        let q = QueryEmbedding::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(relevancy_scores(&seq, &q), Err(RelevanceError::DimMismatch { .. })));
    }

    #[test]
    fn overshooting_norms_are_clamped() {
        let a = [1.00009f64, 0.0];
        let s = cosine(&a, &a);
        assert!(s <= 1.0 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_format() {
        let c = SimilarityCurve::new(vec![0.5]).unwrap();
        assert_eq!(curve_csv(&c), "index,score\n0,0.500000000\n");
        let c = SimilarityCurve::new(vec![0.1f64, -0.25, 1.0]).unwrap();
        let text = curve_csv(&c);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().nth(2), Some("1,-0.250000000"));
    }

    #[test]
    fn export_into_missing_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("no/such/dir/curve.csv");
        let c = SimilarityCurve::new(vec![0.5]).unwrap();
        assert!(matches!(export_curve_csv(&c, path), Err(RelevanceError::Io(_))));
    }
}
