//! Robust open-set node classification on graphs with noisy training labels.
//!
//! The crate is organized bottom-up:
//!
//! * [`graph`] / [`sparse`]: graph model, TSV ingestion, GCN normalization, splits
//! * [`gcn`]: two-layer GCN encoder, reverse pass, Adam
//! * [`denoise`]: kNN affinity, label propagation, clean-set selection
//! * [`proto`]: region clustering, interior/border prototypes, losses
//! * [`pipeline`]: training loop, open-set prediction, model files
//! * [`bench`]: noise injection, metrics, experiment runner
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, which is what the training loop and the
//! gradient checks are tuned for.

pub mod bench;
pub mod denoise;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod pipeline;
pub mod proto;
pub mod scalar;
pub mod sparse;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Graph = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type CsrMatrix = sparse::CsrMatrix<f64>;
pub type NormalizedAdjacency = graph::NormalizedAdjacency<f64>;
pub type GcnParams = gcn::GcnParams<f64>;
pub type AffinityGraph = denoise::AffinityGraph<f64>;
pub type SoftLabels = denoise::SoftLabels<f64>;
pub type PrototypePool = proto::PrototypePool<f64>;
pub type Model = pipeline::Model<f64>;
pub type NoisyDataset = bench::noise::NoisyDataset<f64>;
