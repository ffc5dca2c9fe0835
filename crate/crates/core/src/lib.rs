//! Retrieval-augmented generation of intent-specific code comments.
//!
//! The pipeline retrieves same-intent examples for a target method, re-ranks
//! them by code/comment consistency, augments each chosen example with the
//! statements its comment attends to most under a code-search cross-encoder,
//! and renders a chain-of-thought prompt for any completion-style model.
//! Generated comments are scored with BLEU-4, METEOR, ROUGE-L and an
//! embedding cosine.
//!
//! Module map:
//!
//! - [`corpus`]: JSONL ingestion, validation, deduplication, intent filtering
//! - [`codetext`]: sub-token lexing and line-level statement segmentation
//! - [`retrieval`]: token (Jaccard) and semantic (cosine) top-k retrieval
//! - [`selection`]: example quality, rank fusion, top-f selection
//! - [`knowledge`]: attention slicing and important-statement extraction
//! - [`promptgen`]: prompt rendering and response parsing
//! - [`gateway`]: HTTP clients for the model server and completion LLM
//! - [`metrics`]: BLEU-4, METEOR, ROUGE-L, embedding similarity, aggregation
//! - [`pipeline`]: end-to-end runs, resumable persistence, reports
//! - [`stub`]: deterministic in-process and HTTP implementations of the
//!   service wire contract, for tests and offline demos

pub mod codetext;
pub mod corpus;
pub mod gateway;
pub mod knowledge;
pub mod metrics;
pub mod pipeline;
pub mod promptgen;
pub mod retrieval;
pub mod selection;
pub mod stub;

pub use corpus::{CodeCommentPair, Corpus, CorpusRole, IntentCategory, Split};
