//! Content-based recommendation for one-of-a-kind items.
//!
//! Items carry curated metadata, a deep image embedding and seven explicit
//! visual features. Each source scores unsold candidates against what a user
//! already bought; a BPR-trained linear fusion combines the sources, and a
//! chronological replay measures top-k accuracy.

pub mod catalog;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod evf;
pub mod features;
pub mod hybrid;
pub mod scoring;
pub mod synth;

pub use catalog::{load_catalog, Catalog, ItemId, ItemIdx, ItemRecord, Transaction, UserId};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalCase, EvalOptions, EvalReport, MethodSpec};
pub use features::{FeatureStore, FeatureVector, Source};
pub use hybrid::{BprConfig, HybridWeights};
pub use scoring::{Aggregation, ScoredPool};
