//! Reflective rewrite of a prompt by the reflection model.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, Message, ModelClient};
use crate::template::{escape_placeholders_except, PromptOrigin, PromptTemplate};
use crate::text::extract_code;

pub const REFLECTION_SYSTEM_PROMPT: &str = "You are an expert prompt engineer. You rewrite prompt templates so that a specific target model solves a task more reliably, guided by evaluation feedback.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub instance_excerpt: String,
    pub response_excerpt: String,
    pub performance: f64,
    pub behavior: f64,
    pub failure_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionQuery {
    pub task_description: String,
    pub current_template: PromptTemplate,
    pub feedback: Vec<FeedbackItem>,
    /// (prompt body, combined score)
    pub inspirations: Vec<(String, f64)>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutationError {
    #[error("reflection query has no feedback")]
    NoFeedback,
    #[error("reflection call failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("reflection model returned an empty prompt")]
    Empty,
    #[error("rewritten prompt drops placeholders: {}", .0.join(", "))]
    MissingPlaceholders(Vec<String>),
}

/// System and user messages for a reflection call.
pub fn reflection_messages(query: &ReflectionQuery) -> Vec<Message> {
    let mut user = String::new();
    let _ = writeln!(user, "TASK DESCRIPTION\n{}\n", query.task_description.trim());
    let _ = writeln!(user, "CURRENT PROMPT\n```\n{}\n```\n", query.current_template.body);
    user.push_str("EVALUATION FEEDBACK\n");
    for f in &query.feedback {
        let _ = write!(
            user,
            "- question: {} | response: {} | performance: {:.3} | behavior: {:.3}",
            f.instance_excerpt, f.response_excerpt, f.performance, f.behavior
        );
        if let Some(note) = &f.failure_note {
            let _ = write!(user, " | failure: {note}");
        }
        user.push('\n');
    }
    user.push_str("\nINSPIRATIONS\n");
    if query.inspirations.is_empty() {
        user.push_str("(none)\n");
    }
    for (i, (body, score)) in query.inspirations.iter().enumerate() {
        let _ = writeln!(user, "{}. combined score {:.3}\n```\n{}\n```", i + 1, score, body);
    }
    let holes: Vec<String> = query
        .current_template
        .placeholders
        .iter()
        .map(|p| format!("{{{p}}}"))
        .collect();
    user.push_str("\nINSTRUCTIONS\n");
    user.push_str("Rewrite the current prompt so the target model performs better on this task. ");
    if !holes.is_empty() {
        let _ = write!(user, "Keep these placeholders exactly as written: {}. ", holes.join(", "));
    }
    user.push_str("Output only the rewritten prompt inside a single fenced code block.\n");
    vec![Message::system(REFLECTION_SYSTEM_PROMPT), Message::user(user)]
}

/// Asks the reflection model for a rewrite of `query.current_template`.
/// The child keeps exactly the parent's placeholder set; extra `{name}`
/// holes the model invents are escaped to literal text.
pub fn reflect_and_mutate(
    query: &ReflectionQuery,
    reflection: &ModelClient,
    child_id: &str,
) -> Result<PromptTemplate, MutationError> {
    if query.feedback.is_empty() {
        return Err(MutationError::NoFeedback);
    }
    let response = reflection.chat(reflection_messages(query))?;
    let body = extract_code(&response.content);
    if body.trim().is_empty() {
        return Err(MutationError::Empty);
    }
    let parent = &query.current_template;
    let missing = parent.missing_in(body);
    if !missing.is_empty() {
        return Err(MutationError::MissingPlaceholders(missing));
    }
    let body = escape_placeholders_except(body, &parent.placeholders);
    Ok(PromptTemplate {
        id: child_id.to_string(),
        body,
        placeholders: parent.placeholders.clone(),
        origin: PromptOrigin::Evolved,
    })
}
