//! Hamming-space graph convolutional hashing for implicit-feedback
//! recommendation.
//!
//! The crate trains K-bit ±1 user/item codes on the user–item bipartite
//! graph: a continuation (scaled-tanh) initial layer, stacked propagation
//! layers that refine each node's bits toward the dominant bits of its
//! neighbors, and an inner-product prediction layer. Trained codes are
//! bit-packed and served by an exact XOR+popcount top-k engine with an
//! optional band-bucket candidate index, plus a ranking-metrics harness.
//!
//! Real-valued math is generic over [`scalar::Real`] (f32 or f64); the
//! aliases below pin the concrete instantiations used by the pipeline.

pub mod checkpoint;
pub mod codefile;
pub mod eval;
pub mod graph;
pub mod hamming;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod retrieval;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use graph::{build_graph, load_interactions, split, BipartiteGraph, InteractionDataset};
pub use hamming::{CodeMatrix, HashCode};
pub use model::ModelConfig;
pub use trainer::TrainConfig;

/// Scalar of the training pipeline; matches the 32-bit checkpoint entries
/// so save/load round-trips are bit-exact.
pub type PipelineScalar = f32;
/// Wide scalar used where extra precision matters (gradient verification).
pub type CheckScalar = f64;

pub type Matrix32 = matrix::Matrix<f32>;
pub type Matrix64 = matrix::Matrix<f64>;
pub type EmbeddingTable32 = model::EmbeddingTable<f32>;
pub type EmbeddingTable64 = model::EmbeddingTable<f64>;
pub type LayerState32 = model::LayerState<f32>;
pub type LayerState64 = model::LayerState<f64>;
pub type TrainerState32 = trainer::TrainerState<f32>;
