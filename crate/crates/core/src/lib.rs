//! Prompt calibration, cross-model prompt transfer and drift analysis.
//!
//! The engine evolves task- and model-specific prompts with an island-based
//! reflective search, learns a transfer summary from paired optimal prompts,
//! applies it to new prompts, and measures how much accuracy a prompt loses
//! when the model underneath it changes. Every model call goes through
//! [`gateway::Gateway`], which speaks the OpenAI-compatible wire protocol or
//! a deterministic scripted mock.

pub mod analysis;
pub mod behavior;
pub mod cli;
pub mod config;
pub mod eval;
pub mod evolution;
pub mod gateway;
pub mod model;
pub mod persist;
pub mod process;
pub mod template;
pub mod text;
pub mod transfer;

pub use model::{
    combined_score, mean_accuracy, transfer_gap, CandidateRecord, DomainError, EvalOutcome, ModelId,
    ModelRole, TaskInstance, TaskKind, TaskSpec,
};
pub use template::{render_prompt, PromptOrigin, PromptTemplate};
