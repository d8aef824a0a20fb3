//! Summarize-then-rank reranking for long documents.
//!
//! Long documents are compressed one at a time into short query-grounded
//! summaries, and a listwise reranker then orders the summaries with a
//! sliding window. The crate covers every stage of that flow:
//!
//! - [`corpus`]: corpus, query, qrels and TREC run file I/O
//! - [`retrieval`]: BM25 first-stage retrieval and FirstP truncation
//! - [`metrics`]: NDCG@k and MAP@k evaluation
//! - [`rerank`]: permutation parsing and sliding-window listwise reranking
//! - [`summarize`]: prompt rendering, safeguard detection and summarizer backends
//! - [`rl_data`]: candidate lists and frozen background summaries for policy training
//! - [`train`]: a small extractive summarization policy trained by behavior
//!   cloning and then by group-relative policy optimization against a ranking reward
//! - [`pipeline`]: resumable end-to-end runs driven by a single config file
//!
//! [`synthetic`] generates the deterministic long-document corpus used by the
//! acceptance suite and the examples in the README.

pub mod corpus;
pub mod error;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod rerank;
pub mod retrieval;
pub mod rl_data;
pub mod summarize;
pub mod synthetic;
pub mod train;
mod util;

pub use corpus::{Corpus, Document, Query, QrelsTable, RankedList, RunEntry};
pub use error::{Error, Result};
pub use metrics::{EvalReport, Gain, MetricConfig};
pub use rerank::{Reranker, WindowPlan};
pub use retrieval::{Bm25Params, InvertedIndex};
pub use rl_data::{RlDataConfig, RlInstance};
pub use summarize::{Summarizer, Summary};
pub use train::{GrpoConfig, PolicyParams, Rollout, SftConfig};
