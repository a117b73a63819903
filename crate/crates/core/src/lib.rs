//! Cluster-level annotation engine for submeter land-cover mapping.
//!
//! The crate takes object masks produced at two scales, fuses them into a
//! disjoint mask set, groups similar masks inside spatial tile windows so a
//! whole cluster can be labeled with a single action, curates a spatially
//! stratified dense test set, and scores predictions.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! pin the concrete types used by the file formats and the CLI.

pub mod annotation;
pub mod clustering;
pub mod config;
pub mod curation;
pub mod digest;
pub mod error;
pub mod features;
pub mod fusion;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod scalar;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

pub type FeatureTable = features::FeatureTable<f32>;
pub type TileEmbedding = curation::TileEmbedding<f32>;
pub type MetricsReport = metrics::MetricsReport<f64>;
pub type ConsistencyLossConfig = features::ConsistencyLossConfig<f32>;
pub type FeatureMap = features::FeatureMap<f32>;
