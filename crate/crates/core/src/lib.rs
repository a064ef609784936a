//! Query-aware key clip selection for long videos.
//!
//! Given per-frame embeddings and a query embedding, the engine picks anchor
//! frames on the relevancy curve, grows each anchor into a short clip, and
//! trades clip length against spatial resolution so the whole plan fits the
//! token budget of `K` full-resolution frames.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`). Containers store
//! `f32`; the aliases below are the `f64` instantiations the CLI uses.

pub mod anchors;
pub mod baselines;
pub mod container;
pub mod eval;
pub mod model;
pub mod planner;
pub mod relevance;
pub mod scalar;

pub use anchors::{basin_peaks, find_valleys, kmeans_1d, select_anchors, AnchorSet, KMeansError};
pub use baselines::{
    augment_to_clips, its_select, topk_select, uniform_select, watershed_select, FrameSelection, DEFAULT_ITS_ALPHA,
};
pub use container::{read_container, write_container, Container, ContainerError};
pub use eval::{coverage, synth_curve, synth_embeddings, token_report, GroundTruth, Picked};
pub use model::{
    validate_sequence, ClipPlan, EmbeddingSequence, KeyClip, ModelError, QueryEmbedding, SelectionConfig,
    SimilarityCurve,
};
pub use planner::{plan, plan_from_curve, LengthPolicy, ObjectiveTrace, PlanError};
pub use relevance::{export_curve_csv, relevancy_scores, RelevanceError};
pub use scalar::Scalar;

pub type Embeddings = EmbeddingSequence<f64>;
pub type Query = QueryEmbedding<f64>;
pub type Curve = SimilarityCurve<f64>;
pub type Trace = ObjectiveTrace<f64>;

pub type Embeddings32 = EmbeddingSequence<f32>;
pub type Query32 = QueryEmbedding<f32>;
pub type Curve32 = SimilarityCurve<f32>;
