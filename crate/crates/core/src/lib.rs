//! Knowledge homogenization for knowledge-grounded dialogue.
//!
//! Heterogeneous sources (graph dumps, passages, tables, keyword lists,
//! labeled dialogue knowledge) are reduced to [`KnowledgeTriple`]s. A
//! retrieve / TF-IDF rank / semantic rerank cascade attaches the few most
//! relevant triples to each responder turn, and the result is written as a
//! JSON-lines sequence-to-sequence corpus. Generated responses are scored
//! with the usual overlap, diversity and recall metrics.

pub mod adapters;
pub mod cascade;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod simprov;
pub mod store;
pub mod text;
pub mod tfidf;
pub mod types;

pub use cascade::{run_cascade, CascadeConfig, CascadeResult, ScoredTriple, StageAudit};
pub use corpus::{BuildMode, KnowledgeOrigin, MixSpec, TrainingExample};
pub use error::{Error, ProviderError, Result};
pub use metrics::{EvalRecord, MetricReport};
pub use simprov::{EmbeddingCache, LexicalProvider, RemoteProvider, SimilarityProvider, VectorFileProvider};
pub use store::KnowledgeStore;
pub use text::{tokenize_length, tokenize_metric};
pub use types::{canonical_text, Dialogue, DialogueTurn, KnowledgeTriple, SourceTag, Speaker};
