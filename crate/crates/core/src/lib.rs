//! Zero-shot human activity recognition over multi-sensor motion windows.
//!
//! Pair-wise feature importances form a knowledge base, per-placement
//! indexes supply class-wise evidence fused by reciprocal rank, and a staged
//! chat-model pipeline selects features, prunes candidates and decides.

pub mod agents;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod index;
pub mod knowledge;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureVectorF32 = features::FeatureVector<f32>;
pub type FeatureVectorF64 = features::FeatureVector<f64>;
pub type PlacementIndexF32 = index::PlacementIndex<f32>;
pub type PlacementIndexF64 = index::PlacementIndex<f64>;
pub type RetrieverF64 = fusion::Retriever<f64>;
pub type FusedRankF64 = fusion::FusedRank<f64>;
/// Fused ranks in exact rational arithmetic.
pub type ExactFusedRank = fusion::FusedRank<num_rational::Ratio<i64>>;
