//! Adapter prompt bodies, one per benchmark family plus a generic one.
//!
//! Every body carries `{original_prompt}`, `{summary}`, `{source_model}`
//! and `{target_model}` and ends with the `Optimized Prompt:` cue.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::template::placeholders_in;

pub const REQUIRED_PLACEHOLDERS: [&str; 4] = ["original_prompt", "summary", "source_model", "target_model"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterDomain {
    Coding,
    SweAgent,
    TerminalAgent,
    Planner,
    Generic,
}

impl FromStr for AdapterDomain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "coding" => Ok(Self::Coding),
            "swe_agent" | "swe" => Ok(Self::SweAgent),
            "terminal_agent" | "terminal" => Ok(Self::TerminalAgent),
            "planner" | "planning" => Ok(Self::Planner),
            "generic" => Ok(Self::Generic),
            other => Err(format!(
                "unknown adapter domain `{other}` (expected coding, swe-agent, terminal-agent, planner or generic)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterDomainTemplate {
    pub domain: AdapterDomain,
    pub body: String,
}

impl AdapterDomainTemplate {
    pub fn builtin(domain: AdapterDomain) -> Self {
        let body = match domain {
            AdapterDomain::Coding => CODING.to_string(),
            AdapterDomain::SweAgent => agent_body("SWE-Bench", "a standard coding dataset", "SWE-Bench"),
            AdapterDomain::TerminalAgent => agent_body("Terminal Bench", "a standard coding dataset", "Terminal Bench"),
            AdapterDomain::Planner => agent_body("a planning agent benchmark", "several standard datasets", "TravelPlanner"),
            AdapterDomain::Generic => GENERIC.to_string(),
        };
        Self { domain, body }
    }

    /// A user-supplied body; all four placeholders must be present.
    pub fn custom(domain: AdapterDomain, body: impl Into<String>) -> Result<Self, String> {
        let t = Self { domain, body: body.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), String> {
        let present = placeholders_in(&self.body);
        let missing: Vec<&str> = REQUIRED_PLACEHOLDERS
            .iter()
            .copied()
            .filter(|p| !present.contains(*p))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(format!("adapter template lacks {}", missing.join(", ")))
        }
    }
}

const CODING: &str = "Your task is to apply the transfer effects from the source prompt to generate a new target prompt.

The transfer effects were derived from the standard coding dataset.

You must now generate a prompt for the unseen dataset that incorporates these transfer effects.

Begin from the Original Prompt provided below.

## ====== Original Prompt Starts ========

## Original Prompt: {original_prompt}

## ====== Original Prompt Ends ========

## Transfer Effects Summary:

{summary}

## Task:

Apply the above transfer effects summary to the Original Prompt designed for {source_model}.

Generate a new prompt that is:

- Adapted for the {target_model} model,

- Grounded in the transfer effects summary,

- Suitable for eliciting higher-quality responses on the coding datasets, such as HumanEval and xCodeEval.

Optimized Prompt:";

// The three agent-benchmark bodies share one layout and differ in where the
// effects came from and which benchmark they target.
fn agent_body(adapted_for: &str, derived_from: &str, benchmark: &str) -> String {
    format!(
        "Your task is to generate a new target prompt by applying the specified transfer effects to the Original Prompt.

These transfer effects were derived from {derived_from} and must now be adapted for {adapted_for}.

The new prompt should:

- Begin from the provided Original Prompt.

- Incorporate the transfer effects summary faithfully.

- Be adapted for the {{target_model}} model.

- Remain concise and preserve the original meaning.

- Improve suitability for eliciting high-quality responses on complex agent benchmarks such as {benchmark}.

## ====== Original Prompt ======

{{original_prompt}}

## ====== End Original Prompt ======

## ====== Transfer Effects Summary ======

{{summary}}

## ====== End Transfer Effects Summary ======

**Task:**

Apply the transfer effects summary to the Original Prompt optimized for {{source_model}} and produce an optimized prompt for {{target_model}}.

Optimized Prompt:"
    )
}

const GENERIC: &str = "Your task is to generate a new target prompt by applying the specified transfer effects to the Original Prompt.

The transfer effects describe how prompts that work best for {source_model} should be reformulated to work best for {target_model}.

The new prompt should:

- Begin from the provided Original Prompt.

- Incorporate the transfer effects summary faithfully.

- Keep every placeholder written in curly braces exactly as it appears.

- Remain concise and preserve the original meaning.

## ====== Original Prompt ======

{original_prompt}

## ====== End Original Prompt ======

## ====== Transfer Effects Summary ======

{summary}

## ====== End Transfer Effects Summary ======

**Task:**

Apply the transfer effects summary to the Original Prompt optimized for {source_model} and produce an optimized prompt for {target_model}.

Optimized Prompt:";
