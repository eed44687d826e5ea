//! Homology-aware speculative retrieval.
//!
//! A query is first answered from two cheap channels on the edge: exact search
//! over the documents of recently cached queries, and a coarse IVF probe over
//! (a subset of) the corpus. The merged draft is accepted when enough of its
//! documents were also returned for a single cached query; otherwise the
//! query falls back to exact full-corpus retrieval and its result is cached.

pub mod backend;
pub mod bench;
pub mod cache;
pub mod config;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod index;
pub mod rng;
pub mod workload;

pub use backend::{FullBackend, LatencyBreakdown, LatencyModel, Stage};
pub use cache::{CacheEntry, QueryCache};
pub use embedding::{
    inner_product, normalize, AttrId, DocId, Embedding, EntityId, QueryId, SimScore,
};
pub use engine::{Decision, Engine, EngineConfig, RetrievalOutcome};
pub use error::{HasError, Result};
pub use index::{flat_topk, ivf_build, ivf_topk, FlatIndex, IvfIndex, RankedHits};
pub use rng::{seeded_rng, RngStream};
