//! Prompt templates with `{name}` placeholders.
//!
//! Placeholder names follow identifier rules (`[A-Za-z_][A-Za-z0-9_]*`).
//! `{{` and `}}` are escapes for literal braces. Any other brace, such as
//! the ones in a JSON snippet embedded in a prompt, is kept as literal text.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrigin {
    Seed,
    Evolved,
    Transferred,
    Manual,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unresolved placeholders: {}", .0.join(", "))]
    MissingBindings(Vec<String>),
    #[error("placeholder `{0}` is declared but does not occur in the body")]
    UndeclaredPlaceholder(String),
    #[error("template id must not be empty")]
    EmptyId,
}

/// A prompt with named holes. This is the unit being evolved and transferred.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub placeholders: BTreeSet<String>,
    pub origin: PromptOrigin,
}

/// Output of [`PromptTemplate::render`]. Binding keys the template never
/// used are reported rather than rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    pub unused_bindings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment<'a> {
    Text(&'a str),
    Brace(char),
    Hole(&'a str),
}

fn is_ident(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn segments(body: &str) -> Vec<Segment<'_>> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push(Segment::Text(&body[start..i]));
                out.push(Segment::Brace('{'));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push(Segment::Text(&body[start..i]));
                out.push(Segment::Brace('}'));
                i += 2;
                start = i;
            }
            b'{' => {
                let close = body[i + 1..].find(['}', '{']).map(|p| p + i + 1);
                match close {
                    Some(end) if bytes[end] == b'}' && is_ident(&body[i + 1..end]) => {
                        out.push(Segment::Text(&body[start..i]));
                        out.push(Segment::Hole(&body[i + 1..end]));
                        i = end + 1;
                        start = i;
                    }
                    _ => i += 1,
                }
            }
            _ => i += 1,
        }
    }
    out.push(Segment::Text(&body[start..]));
    out.retain(|s| !matches!(s, Segment::Text("")));
    out
}

/// Names of all placeholders occurring in `body`.
pub fn placeholders_in(body: &str) -> BTreeSet<String> {
    segments(body)
        .into_iter()
        .filter_map(|s| match s {
            Segment::Hole(name) => Some(name.to_string()),
            _ => None,
        })
        .collect()
}

/// Escape every placeholder in `body` that is not in `keep`, so the result
/// has exactly the placeholder set `keep ∩ placeholders_in(body)`.
pub fn escape_placeholders_except(body: &str, keep: &BTreeSet<String>) -> String {
    let mut out = String::with_capacity(body.len());
    for seg in segments(body) {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Brace('{') => out.push_str("{{"),
            Segment::Brace(_) => out.push_str("}}"),
            Segment::Hole(name) if keep.contains(name) => {
                out.push('{');
                out.push_str(name);
                out.push('}');
            }
            Segment::Hole(name) => {
                out.push_str("{{");
                out.push_str(name);
                out.push_str("}}");
            }
        }
    }
    out
}

impl PromptTemplate {
    /// Builds a template whose placeholder set is read off the body.
    pub fn new(id: impl Into<String>, body: impl Into<String>, origin: PromptOrigin) -> Self {
        let body = body.into();
        Self {
            id: id.into(),
            placeholders: placeholders_in(&body),
            body,
            origin,
        }
    }

    /// Checks that every declared placeholder occurs in the body.
    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.id.trim().is_empty() {
            return Err(TemplateError::EmptyId);
        }
        let present = placeholders_in(&self.body);
        match self.placeholders.iter().find(|p| !present.contains(*p)) {
            Some(p) => Err(TemplateError::UndeclaredPlaceholder(p.clone())),
            None => Ok(()),
        }
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<Rendered, TemplateError> {
        render_prompt(&self.body, bindings)
    }

    /// Placeholders in `self` that `other` lacks.
    pub fn missing_in(&self, other_body: &str) -> Vec<String> {
        let present = placeholders_in(other_body);
        self.placeholders
            .iter()
            .filter(|p| !present.contains(*p))
            .cloned()
            .collect()
    }
}

/// Substitutes each `{name}` in `body` by its binding and unescapes `{{`/`}}`.
/// Substitution is single pass: braces inside bound values are not expanded.
pub fn render_prompt(
    body: &str,
    bindings: &BTreeMap<String, String>,
) -> Result<Rendered, TemplateError> {
    let segs = segments(body);
    let mut missing = BTreeSet::new();
    let mut used = BTreeSet::new();
    let mut text = String::with_capacity(body.len());
    for seg in &segs {
        match seg {
            Segment::Text(t) => text.push_str(t),
            Segment::Brace(c) => text.push(*c),
            Segment::Hole(name) => match bindings.get(*name) {
                Some(v) => {
                    used.insert(*name);
                    text.push_str(v);
                }
                None => {
                    missing.insert(name.to_string());
                }
            },
        }
    }
    if !missing.is_empty() {
        return Err(TemplateError::MissingBindings(missing.into_iter().collect()));
    }
    let unused_bindings: Vec<String> = bindings
        .keys()
        .filter(|k| !used.contains(k.as_str()))
        .cloned()
        .collect();
    for key in &unused_bindings {
        log::warn!("binding `{key}` is not used by the template");
    }
    Ok(Rendered {
        text,
        unused_bindings,
    })
}
