//! Deterministic scripted backend for offline runs and tests.
//!
//! Answer order: the scripted queue (if any entries remain), then the first
//! rule whose matcher hits the rendered request, then the fallback.
//! Embeddings are hash-derived unit vectors unless a fixture overrides them.

use std::collections::BTreeMap;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, ChatRequest, ChatResponse, FinishReason, GatewayError, Usage};
use crate::model::ModelId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMatcher {
    Substring(String),
    Regex(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub matcher: MockMatcher,
    pub response: String,
}

impl MockRule {
    pub fn substring(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: MockMatcher::Substring(needle.into()),
            response: response.into(),
        }
    }

    pub fn regex(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: MockMatcher::Regex(pattern.into()),
            response: response.into(),
        }
    }
}

fn default_dim() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub queue: Vec<String>,
    /// Restart the queue when exhausted instead of falling through to rules.
    #[serde(default)]
    pub cycle_queue: bool,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub fallback: String,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    /// Fixed vectors for specific texts, returned verbatim.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            queue: Vec::new(),
            cycle_queue: false,
            rules: Vec::new(),
            fallback: String::new(),
            embedding_dim: default_dim(),
            embeddings: BTreeMap::new(),
        }
    }
}

#[derive(Debug)]
enum Compiled {
    Substring(String),
    Regex(Regex),
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct MockCounts {
    pub calls: usize,
    pub queue_hits: usize,
    pub rule_hits: Vec<usize>,
    pub fallback_hits: usize,
    pub embed_calls: usize,
}

#[derive(Debug)]
struct State {
    cursor: usize,
    counts: MockCounts,
}

#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    matchers: Vec<Compiled>,
    state: Mutex<State>,
}

/// Builds a rule-table backend with the given fallback.
pub fn mock_program(rules: Vec<MockRule>, fallback: impl Into<String>) -> Result<MockBackend, GatewayError> {
    MockBackend::new(MockScript {
        rules,
        fallback: fallback.into(),
        ..MockScript::default()
    })
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, GatewayError> {
        if script.embedding_dim == 0 {
            return Err(GatewayError::Config("mock embedding_dim must be positive".into()));
        }
        let matchers = script
            .rules
            .iter()
            .map(|r| match &r.matcher {
                MockMatcher::Substring(s) => Ok(Compiled::Substring(s.clone())),
                MockMatcher::Regex(p) => Regex::new(p)
                    .map(Compiled::Regex)
                    .map_err(|e| GatewayError::Config(format!("mock rule regex `{p}`: {e}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rule_count = matchers.len();
        Ok(Self {
            script,
            matchers,
            state: Mutex::new(State {
                cursor: 0,
                counts: MockCounts {
                    rule_hits: vec![0; rule_count],
                    ..MockCounts::default()
                },
            }),
        })
    }

    pub fn counts(&self) -> MockCounts {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).counts.clone()
    }

    pub fn rule_hits(&self) -> Vec<usize> {
        self.counts().rule_hits
    }

    fn answer(&self, rendered: &str) -> String {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        st.counts.calls += 1;
        let queue = &self.script.queue;
        if !queue.is_empty() && (st.cursor < queue.len() || self.script.cycle_queue) {
            let item = queue[st.cursor % queue.len()].clone();
            st.cursor += 1;
            st.counts.queue_hits += 1;
            return item;
        }
        for (i, m) in self.matchers.iter().enumerate() {
            let hit = match m {
                Compiled::Substring(s) => rendered.contains(s.as_str()),
                Compiled::Regex(r) => r.is_match(rendered),
            };
            if hit {
                st.counts.rule_hits[i] += 1;
                return self.script.rules[i].response.clone();
            }
        }
        st.counts.fallback_hits += 1;
        self.script.fallback.clone()
    }
}

/// Deterministic unit vector derived from SHA-256 of the text.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut block = 0u64;
    while out.len() < dim {
        let mut h = Sha256::new();
        h.update(block.to_le_bytes());
        h.update(text.as_bytes());
        let digest = h.finalize();
        for chunk in digest.chunks_exact(8) {
            if out.len() == dim {
                break;
            }
            let n = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            // map to [-1, 1]
            out.push((n as f64 / u64::MAX as f64) * 2.0 - 1.0);
        }
        block += 1;
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    }
    out
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let rendered = request.rendered();
        let content = self.answer(&rendered);
        Ok(ChatResponse {
            finish_reason: if content.is_empty() { FinishReason::Error } else { FinishReason::Stop },
            usage: Usage {
                prompt_tokens: word_count(&rendered),
                completion_tokens: word_count(&content),
            },
            content,
        })
    }

    fn embed(&self, texts: &[String], _model: &ModelId) -> Result<Vec<Vec<f64>>, GatewayError> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).counts.embed_calls += 1;
        Ok(texts
            .iter()
            .map(|t| {
                self.script
                    .embeddings
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| hash_embedding(t, self.script.embedding_dim))
            })
            .collect())
    }
}
