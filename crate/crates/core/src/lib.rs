//! Target-aware, duration-budgeted subset selection over precomputed
//! speech embedding views.
//!
//! A corpus is a JSONL manifest plus one or more embedding views, each a
//! dense matrix with one row per utterance. Given embeddings of one or more
//! target datasets, [`selection::batched_mmr`] picks a subset whose total
//! duration reaches a fraction of the corpus, trading relevance to the
//! targets against redundancy within the subset. Random and
//! duration-matched baselines, a random projection for dimensionality
//! reduction, k-means target compaction and a cross-view probe round out
//! the toolkit.

pub mod atomic;
pub mod cli;
pub mod fixture;
pub mod kernels;
pub mod kmeans;
pub mod probe;
pub mod projection;
pub mod relevance;
pub mod selection;
pub mod store;

pub use relevance::{AggregationMode, FusionWeights, RelevanceVector};
pub use selection::{SelectionConfig, SelectionError, SelectionResult};
pub use store::{CorpusManifest, EmbeddingView, Matrix, StoreError, TargetSet, UtteranceRecord};
