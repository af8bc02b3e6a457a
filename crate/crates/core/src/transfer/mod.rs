//! Cross-model prompt transfer.
//!
//! A mapping extractor reads paired source/target optimal prompts and writes
//! a summary of how prompts change between the two models. An adapter model
//! then applies that summary to rewrite a source prompt for the target model.

mod drift;
mod templates;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use drift::{drift_matrix, DriftMatrix, DriftModel};
pub use templates::{AdapterDomain, AdapterDomainTemplate, REQUIRED_PLACEHOLDERS};

use crate::eval::EvalError;
use crate::gateway::{GatewayError, Message, ModelClient};
use crate::model::ModelId;
use crate::template::{escape_placeholders_except, render_prompt, PromptOrigin, PromptTemplate, TemplateError};

pub const EXTRACTOR_SYSTEM_PROMPT: &str = "You are a helpful assistant that summarizes the difference of prompts.";
pub const OPTIMIZED_MARKER: &str = "Optimized Prompt:";

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("at least one alignment pair is required")]
    NoPairs,
    #[error("alignment pair `{0}` has an empty prompt")]
    EmptyPrompt(String),
    #[error("mapping extractor returned an empty summary")]
    EmptySummary,
    #[error("mapping is for {mapping_source} -> {mapping_target}, but {requested_source} -> {requested_target} was requested")]
    Direction {
        mapping_source: String,
        mapping_target: String,
        requested_source: String,
        requested_target: String,
    },
    #[error("adapter returned an empty prompt")]
    EmptyAdaptation { raw: String },
    #[error("adapted prompt drops placeholders: {}", missing.join(", "))]
    MissingPlaceholders { missing: Vec<String>, raw: String },
    #[error("adapter template: {0}")]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub task_id: String,
    pub source_prompt: PromptTemplate,
    pub target_prompt: PromptTemplate,
    #[serde(default)]
    pub dataset_info: String,
}

impl AlignmentPair {
    pub fn validate(&self) -> Result<(), TransferError> {
        if self.source_prompt.body.trim().is_empty() || self.target_prompt.body.trim().is_empty() {
            return Err(TransferError::EmptyPrompt(self.task_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMapping {
    pub summary: String,
    pub source_model: ModelId,
    pub target_model: ModelId,
    pub pair_ids: Vec<String>,
    pub extractor_model: ModelId,
    /// Seconds since the Unix epoch, or the configured fixed clock.
    pub created_at: u64,
}

impl TransferMapping {
    pub fn validate(&self) -> Result<(), TransferError> {
        if self.summary.trim().is_empty() {
            return Err(TransferError::EmptySummary);
        }
        if self.pair_ids.is_empty() {
            return Err(TransferError::NoPairs);
        }
        Ok(())
    }
}

/// What the adapter sees in place of `{summary}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    /// The extracted mapping summary.
    Summary,
    /// The first alignment pair verbatim.
    OneShot,
    /// Every alignment pair verbatim.
    FewShot,
}

impl std::str::FromStr for AdapterMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "summary" => Ok(Self::Summary),
            "one_shot" => Ok(Self::OneShot),
            "few_shot" => Ok(Self::FewShot),
            other => Err(format!("unknown adapter mode `{other}` (expected summary, one-shot or few-shot)")),
        }
    }
}

fn pair_blocks(pairs: &[AlignmentPair], out: &mut String) {
    for (i, p) in pairs.iter().enumerate() {
        let n = i + 1;
        let _ = write!(
            out,
            "Source Prompt {n}: {}\n\nTarget Prompt {n}: {}\n\nDataset: {}\n\n",
            p.source_prompt.body, p.target_prompt.body, p.dataset_info
        );
    }
}

/// The extractor's user message.
pub fn extractor_prompt(pairs: &[AlignmentPair]) -> String {
    let mut out = format!(
        "Below are {} examples of the source prompts and target prompts, along with their dataset and information on the dataset.\n\n",
        pairs.len()
    );
    pair_blocks(pairs, &mut out);
    out.push_str(
        "Please summarize the common prompt difference of the source prompts to the target prompts, also considering the dataset and information.",
    );
    out
}

pub fn extractor_messages(pairs: &[AlignmentPair]) -> Vec<Message> {
    vec![Message::system(EXTRACTOR_SYSTEM_PROMPT), Message::user(extractor_prompt(pairs))]
}

/// Summarizes how the pairs' prompts change from source to target.
/// The raw response is stored as the summary.
pub fn extract_mapping(
    pairs: &[AlignmentPair],
    source_model: &ModelId,
    target_model: &ModelId,
    extractor: &ModelClient,
    created_at: u64,
) -> Result<TransferMapping, TransferError> {
    if pairs.is_empty() {
        return Err(TransferError::NoPairs);
    }
    for p in pairs {
        p.validate()?;
    }
    let response = extractor.chat(extractor_messages(pairs))?;
    if response.content.trim().is_empty() {
        return Err(TransferError::EmptySummary);
    }
    Ok(TransferMapping {
        summary: response.content,
        source_model: source_model.clone(),
        target_model: target_model.clone(),
        pair_ids: pairs.iter().map(|p| p.task_id.clone()).collect(),
        extractor_model: extractor.model().clone(),
        created_at,
    })
}

/// A mapping whose summary is the alignment pairs themselves, for the
/// in-context ablations. No model call is made.
pub fn in_context_mapping(
    pairs: &[AlignmentPair],
    mode: AdapterMode,
    source_model: &ModelId,
    target_model: &ModelId,
    adapter_model: &ModelId,
    created_at: u64,
) -> Result<TransferMapping, TransferError> {
    let used = match mode {
        AdapterMode::Summary => {
            return Err(TransferError::Config(
                "summary mode needs an extracted mapping, not raw pairs".into(),
            ))
        }
        AdapterMode::OneShot => pairs.get(..1).unwrap_or(&[]),
        AdapterMode::FewShot => pairs,
    };
    if used.is_empty() {
        return Err(TransferError::NoPairs);
    }
    for p in used {
        p.validate()?;
    }
    let mut summary = format!(
        "The following {} example(s) show source prompts and the corresponding target prompts.\n\n",
        used.len()
    );
    pair_blocks(used, &mut summary);
    Ok(TransferMapping {
        summary: summary.trim_end().to_string(),
        source_model: source_model.clone(),
        target_model: target_model.clone(),
        pair_ids: used.iter().map(|p| p.task_id.clone()).collect(),
        extractor_model: adapter_model.clone(),
        created_at,
    })
}

/// Text after the last `Optimized Prompt:` marker, or the whole response.
pub fn extract_optimized(response: &str) -> &str {
    match response.rfind(OPTIMIZED_MARKER) {
        Some(at) => response[at + OPTIMIZED_MARKER.len()..].trim(),
        None => response.trim(),
    }
}

pub fn adapter_messages(
    source_prompt: &PromptTemplate,
    mapping: &TransferMapping,
    domain_template: &AdapterDomainTemplate,
) -> Result<Vec<Message>, TransferError> {
    domain_template.validate().map_err(TransferError::Config)?;
    let bindings = [
        ("original_prompt", source_prompt.body.as_str()),
        ("summary", mapping.summary.as_str()),
        ("source_model", mapping.source_model.name.as_str()),
        ("target_model", mapping.target_model.name.as_str()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let rendered = render_prompt(&domain_template.body, &bindings)?;
    Ok(vec![Message::user(rendered.text)])
}

/// Rewrites `source_prompt` for the mapping's target model. The requested
/// direction is given by model names and must match the mapping.
pub fn adapt_prompt(
    source_prompt: &PromptTemplate,
    mapping: &TransferMapping,
    domain_template: &AdapterDomainTemplate,
    adapter: &ModelClient,
    requested: (&str, &str),
) -> Result<PromptTemplate, TransferError> {
    let (src, tgt) = requested;
    if mapping.source_model.name != src || mapping.target_model.name != tgt {
        return Err(TransferError::Direction {
            mapping_source: mapping.source_model.name.clone(),
            mapping_target: mapping.target_model.name.clone(),
            requested_source: src.to_string(),
            requested_target: tgt.to_string(),
        });
    }
    mapping.validate()?;
    let response = adapter.chat(adapter_messages(source_prompt, mapping, domain_template)?)?;
    let body = extract_optimized(&response.content);
    if body.is_empty() {
        return Err(TransferError::EmptyAdaptation { raw: response.content });
    }
    let missing = source_prompt.missing_in(body);
    if !missing.is_empty() {
        return Err(TransferError::MissingPlaceholders {
            missing,
            raw: response.content,
        });
    }
    Ok(PromptTemplate {
        id: format!("{}@{}", source_prompt.id, mapping.target_model.name),
        body: escape_placeholders_except(body, &source_prompt.placeholders),
        placeholders: source_prompt.placeholders.clone(),
        origin: PromptOrigin::Transferred,
    })
}
