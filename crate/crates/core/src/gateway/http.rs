//! OpenAI-compatible HTTP backend.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendConfig, ChatRequest, ChatResponse, FinishReason, GatewayError, Usage};
use crate::model::ModelId;
use crate::text::excerpt;

/// Exponential backoff with full jitter: before retry `k` (1-based) the
/// client sleeps a uniform draw from `[0, min(cap, base·2^(k-1))]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the sleep before retry number `retry` (1-based).
    pub fn ceiling_ms(&self, retry: u32) -> u64 {
        let exp = retry.saturating_sub(1).min(62);
        self.backoff_ms.saturating_mul(1u64 << exp).min(self.max_backoff_ms)
    }

    pub fn delay_ms<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> u64 {
        let ceiling = self.ceiling_ms(retry);
        if ceiling == 0 {
            0
        } else {
            rng.gen_range(0..=ceiling)
        }
    }

    /// Closed-form bound on the total sleep across all retries.
    pub fn max_total_backoff_ms(&self) -> u64 {
        (1..self.max_attempts).map(|k| self.ceiling_ms(k)).sum()
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.base_url)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct WireChat {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireEmbeddings {
    data: Vec<WireEmbedding>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

fn protocol(message: impl Into<String>, payload: &str) -> GatewayError {
    GatewayError::Protocol {
        message: message.into(),
        excerpt: excerpt(payload, 200),
    }
}

/// Parses a `/chat/completions` response body.
pub(crate) fn parse_chat(payload: &str) -> Result<ChatResponse, GatewayError> {
    let wire: WireChat =
        serde_json::from_str(payload).map_err(|e| protocol(format!("bad chat payload: {e}"), payload))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| protocol("response has no choices", payload))?;
    let content = choice.message.content.unwrap_or_default();
    let finish_reason = match choice.finish_reason.as_deref() {
        None | Some("stop") if !content.is_empty() => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        _ => FinishReason::Error,
    };
    let usage = wire
        .usage
        .map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    Ok(ChatResponse {
        content,
        finish_reason,
        usage,
    })
}

/// Parses an `/embeddings` response body, honoring `index` when present.
pub(crate) fn parse_embeddings(payload: &str) -> Result<Vec<Vec<f64>>, GatewayError> {
    let wire: WireEmbeddings = serde_json::from_str(payload)
        .map_err(|e| protocol(format!("bad embeddings payload: {e}"), payload))?;
    let mut rows: Vec<(usize, Vec<f64>)> = wire
        .data
        .into_iter()
        .enumerate()
        .map(|(i, d)| (d.index.unwrap_or(i), d.embedding))
        .collect();
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

impl HttpBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let base_url = config
            .base_url
            .clone()
            .unwrap_or_default()
            .trim_end_matches('/')
            .to_string();
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without authorization", config.api_key_env);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            base_url,
            api_key,
            retry: config.retry,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<String, GatewayError> {
        let url = format!("{}/{}", self.base_url, path);
        let mut attempts = Vec::new();
        let mut rng = rand::thread_rng();
        for attempt in 1..=self.retry.max_attempts {
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let retryable = match req.send() {
                Err(e) => {
                    attempts.push(format!("attempt {attempt}: {e}"));
                    true
                }
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        return Ok(text);
                    }
                    attempts.push(format!("attempt {attempt}: HTTP {} {}", status.as_u16(), excerpt(&text, 120)));
                    status.as_u16() == 429 || status.is_server_error()
                }
            };
            if !retryable {
                break;
            }
            if attempt < self.retry.max_attempts {
                let delay = self.retry.delay_ms(attempt, &mut rng);
                log::debug!("retrying {url} in {delay} ms");
                std::thread::sleep(Duration::from_millis(delay));
            }
        }
        Err(GatewayError::Transport { attempts })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut body = json!({
            "model": request.model.name,
            "messages": request.messages,
        });
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = request.max_tokens {
            body["max_tokens"] = json!(m);
        }
        if let Some(s) = request.seed_hint {
            body["seed"] = json!(s);
        }
        parse_chat(&self.post("chat/completions", &body)?)
    }

    fn embed(&self, texts: &[String], model: &ModelId) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = json!({ "model": model.name, "input": texts });
        parse_embeddings(&self.post("embeddings", &body)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn parses_chat_payload() {
        let r = parse_chat(r#"{"choices":[{"message":{"role":"assistant","content":"hi"},"finish_reason":"stop"}],"usage":{"prompt_tokens":3,"completion_tokens":1,"total_tokens":4}}"#).unwrap();
        assert_eq!(r.content, "hi");
        assert_eq!(r.finish_reason, FinishReason::Stop);
        assert_eq!(r.usage, Usage { prompt_tokens: 3, completion_tokens: 1 });
    }

    #[test]
    fn empty_content_is_not_a_stop() {
        let r = parse_chat(r#"{"choices":[{"message":{"content":null},"finish_reason":"stop"}]}"#).unwrap();
        assert_eq!(r.finish_reason, FinishReason::Error);
        let r = parse_chat(r#"{"choices":[{"message":{"content":"ab"},"finish_reason":"length"}]}"#).unwrap();
        assert_eq!(r.finish_reason, FinishReason::Length);
    }

    #[test]
    fn malformed_payload_carries_excerpt() {
        match parse_chat("<html>oops</html>") {
            Err(GatewayError::Protocol { excerpt, .. }) => assert_eq!(excerpt, "<html>oops</html>"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_chat(r#"{"choices":[]}"#), Err(GatewayError::Protocol { .. })));
    }

    #[test]
    fn embeddings_follow_index() {
        let v = parse_embeddings(r#"{"data":[{"index":1,"embedding":[2.0]},{"index":0,"embedding":[1.0]}]}"#).unwrap();
        assert_eq!(v, vec![vec![1.0], vec![2.0]]);
    }

    #[test]
    fn backoff_bound_is_geometric_sum() {
        let p = RetryPolicy { max_attempts: 5, backoff_ms: 100, max_backoff_ms: 1_000_000 };
        // 100 + 200 + 400 + 800
        assert_eq!(p.max_total_backoff_ms(), 1500);
        assert_eq!(RetryPolicy { max_attempts: 1, ..p }.max_total_backoff_ms(), 0);
    }

    proptest! {
        #[test]
        fn jittered_delays_stay_under_bound(seed in any::<u64>(), attempts in 1u32..8, base in 0u64..500) {
            let p = RetryPolicy { max_attempts: attempts, backoff_ms: base, max_backoff_ms: 5_000 };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let total: u64 = (1..attempts).map(|k| p.delay_ms(k, &mut rng)).sum();
            prop_assert!(total <= p.max_total_backoff_ms());
        }
    }
}
