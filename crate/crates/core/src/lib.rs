//! Rule-based rewards, GRPO and small differentiable policies for visual
//! reinforcement fine-tuning experiments at desk scale.
//!
//! The crate is `no_std` with `alloc`; file formats, the CLI and the HTTP
//! service live in the `vrft` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bleu;
pub mod envs;
pub mod grpo;
pub mod math;
pub mod policy;
pub mod prompt;
pub mod reward;
pub mod sft;
pub mod structured_output;
pub mod train;

pub use bleu::{bleu, BleuConfig};
pub use grpo::{group_advantages, grpo_loss, kl_estimate, GroupBatch, GrpoConfig, GrpoError};
pub use policy::{Arch, Completion, Head, PolicyParams};
pub use prompt::{build_prompt, KnowledgeBase, PromptTemplate};
pub use reward::{score, GroundTruth, RewardBreakdown, RewardSpec};
pub use structured_output::{parse_completion, BBox, ParsedOutput, TaskMode};
pub use train::{GrpoTrainer, RunRecord, TrainError};
