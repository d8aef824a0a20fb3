//! A small extractive summarization policy and its training procedures.
//!
//! The policy reads a document sentence by sentence: a gate token decides
//! between emitting the safeguard phrase and summarizing, then one token per
//! sentence decides whether to copy it. It is trained first by behavior
//! cloning from a lexical teacher ([`sft`]) and then by group-relative policy
//! optimization against a listwise ranking reward ([`grpo`], [`trainer`]).

pub mod checkpoint;
pub mod features;
pub mod grpo;
pub mod policy;
pub mod reward;
pub mod sft;
pub mod text;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use features::PreparedDoc;
pub use grpo::{grpo_step, normalize_advantages, GroupSample, GrpoConfig};
pub use policy::{Decision, DecodeCounter, PolicyParams, PolicySummarizer, Rollout};
pub use reward::{assemble_eval_list, compute_reward};
pub use sft::{train_sft, SftConfig};
pub use text::sentence_split;
pub use trainer::{evaluate_policy, fill_backgrounds, prepare_candidates, train_grpo, HeldoutMetrics, TrainEnv, TrainOutcome};
