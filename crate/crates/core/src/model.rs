//! Shared domain types and the closed-form scoring arithmetic.
//!
//! Accuracies are fractions in `[0, 1]` everywhere inside the engine.
//! Conversion to percentages happens only when reports are written.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{ExternalCheckSpec, MetricKind, MetricSpec};
use crate::template::PromptTemplate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("{field} = {value} is outside [0, 1]")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Source,
    Target,
    Reflection,
    MappingExtractor,
    Adapter,
    Embedding,
}

impl ModelRole {
    pub const ALL: [ModelRole; 6] = [
        ModelRole::Source,
        ModelRole::Target,
        ModelRole::Reflection,
        ModelRole::MappingExtractor,
        ModelRole::Adapter,
        ModelRole::Embedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Source => "source",
            ModelRole::Target => "target",
            ModelRole::Reflection => "reflection",
            ModelRole::MappingExtractor => "mapping_extractor",
            ModelRole::Adapter => "adapter",
            ModelRole::Embedding => "embedding",
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelRole {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s || r.as_str().replace('_', "-") == s)
            .ok_or_else(|| DomainError::Invalid(format!("unknown model role `{s}`")))
    }
}

/// A backend model name together with the role it plays in a run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelId {
    pub name: String,
    pub role: ModelRole,
}

impl ModelId {
    pub fn new(name: impl Into<String>, role: ModelRole) -> Result<Self, DomainError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(DomainError::Empty("model name"));
        }
        Ok(Self { name, role })
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Alignment,
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_point: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_check: Option<ExternalCheckSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub kind: TaskKind,
    pub instances: Vec<TaskInstance>,
    pub metric: MetricSpec,
    #[serde(default)]
    pub info: String,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.instances.is_empty() {
            return Err(DomainError::Empty("task instances"));
        }
        self.metric.validate()?;
        let mut seen = BTreeSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(DomainError::Invalid(format!(
                    "duplicate instance id `{}` in task `{}`",
                    inst.id, self.id
                )));
            }
            match self.metric.kind {
                MetricKind::TextSimilarity if inst.reference.is_none() => {
                    return Err(DomainError::Invalid(format!(
                        "instance `{}` needs a reference for text similarity",
                        inst.id
                    )))
                }
                MetricKind::ExternalExec if inst.external_check.is_none() => {
                    return Err(DomainError::Invalid(format!(
                        "instance `{}` needs an external_check",
                        inst.id
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Result of scoring one model response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub performance: f64,
    pub behavior: f64,
    pub solved: bool,
    pub response: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EvalOutcome {
    pub fn failed(note: impl Into<String>, latency_ms: u64) -> Self {
        Self {
            performance: 0.0,
            behavior: 0.0,
            solved: false,
            response: String::new(),
            latency_ms,
            note: Some(note.into()),
        }
    }
}

/// One row of the candidate database.
///
/// `created_at` is a logical timestamp (a per-archive sequence number) so
/// that archives produced under a mock backend are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub candidate_id: String,
    pub prompt: PromptTemplate,
    pub combined: f64,
    pub mean_performance: f64,
    pub mean_behavior: f64,
    pub island: usize,
    pub generation: u64,
    #[serde(default)]
    pub parent_id: Option<String>,
    pub created_at: u64,
}

impl CandidateRecord {
    /// Checks the stored combined score against its components.
    pub fn verify_combined(&self, lambda: f64) -> Result<(), DomainError> {
        let expected = combined_score(self.mean_performance, self.mean_behavior, lambda)?;
        if (expected - self.combined).abs() > 1e-9 {
            return Err(DomainError::Invalid(format!(
                "candidate `{}`: combined {} != {} = λ·{} + (1−λ)·{}",
                self.candidate_id, self.combined, expected, self.mean_performance, self.mean_behavior
            )));
        }
        Ok(())
    }
}

fn unit(field: &'static str, value: f64) -> Result<f64, DomainError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(DomainError::OutOfRange { field, value })
    }
}

/// `λ·performance + (1−λ)·behavior`, clamped to `[0, 1]`.
pub fn combined_score(performance: f64, behavior: f64, lambda: f64) -> Result<f64, DomainError> {
    let p = unit("performance", performance)?;
    let b = unit("behavior", behavior)?;
    let l = unit("lambda", lambda)?;
    Ok((l * p + (1.0 - l) * b).clamp(0.0, 1.0))
}

/// Signed shortfall of a transferred prompt against the target's own optimum.
/// Negative values are drift losses. Both inputs must share a scale.
pub fn transfer_gap(acc_transferred: f64, acc_target_optimal: f64) -> f64 {
    acc_transferred - acc_target_optimal
}

pub fn mean_accuracy(runs: &[f64]) -> Result<f64, DomainError> {
    if runs.is_empty() {
        return Err(DomainError::Empty("accuracy runs"));
    }
    for &r in runs {
        unit("accuracy", r)?;
    }
    Ok(runs.iter().sum::<f64>() / runs.len() as f64)
}

/// Fraction to report percentage.
pub fn to_percent(fraction: f64) -> f64 {
    fraction * 100.0
}
