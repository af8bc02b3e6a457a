//! Shared fixtures for the integration tests: a tiny blocking HTTP stub that
//! speaks the chat/embeddings JSON shapes, and the magic-token calibration
//! environment.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use promptbridge::behavior::BehaviorScorer;
use promptbridge::eval::{ArtifactDir, Evaluator, MetricKind, MetricSpec};
use promptbridge::gateway::{Gateway, MockBackend, MockRule, MockScript, ModelClient, ModelSettings};
use promptbridge::{ModelId, ModelRole, PromptOrigin, PromptTemplate, TaskInstance, TaskKind, TaskSpec};

#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub authorization: Option<String>,
    pub body: Value,
}

#[derive(Default)]
struct StubState {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    hits: AtomicUsize,
    statuses: Mutex<VecDeque<u16>>,
    requests: Mutex<Vec<Recorded>>,
}

/// Answers every request on its own thread after `delay`. Statuses queued
/// with [`StubServer::fail_next`] are served first; then 200 with a chat
/// or embeddings payload depending on the path.
pub struct StubServer {
    pub base_url: String,
    state: Arc<StubState>,
}

pub const STUB_REPLY: &str = "stub reply";

impl StubServer {
    pub fn start(delay: Duration) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let addr = listener.local_addr().unwrap();
        let state = Arc::new(StubState::default());
        let shared = state.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let st = shared.clone();
                std::thread::spawn(move || handle(stream, &st, delay));
            }
        });
        Self {
            base_url: format!("http://{addr}/v1"),
            state,
        }
    }

    pub fn fail_next(&self, statuses: &[u16]) {
        self.state.statuses.lock().unwrap().extend(statuses.iter().copied());
    }

    pub fn peak(&self) -> usize {
        self.state.peak.load(Ordering::SeqCst)
    }

    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.state.requests.lock().unwrap().clone()
    }
}

fn read_request(stream: &TcpStream) -> Option<(String, Option<String>, Vec<u8>)> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut length = 0usize;
    let mut auth = None;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (name, value) = h.split_once(':')?;
        match name.trim().to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().ok()?,
            "authorization" => auth = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some((path, auth, body))
}

fn handle(mut stream: TcpStream, st: &StubState, delay: Duration) {
    let Some((path, authorization, body)) = read_request(&stream) else {
        return;
    };
    let now = st.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    st.peak.fetch_max(now, Ordering::SeqCst);
    st.hits.fetch_add(1, Ordering::SeqCst);
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    std::thread::sleep(delay);

    let forced = st.statuses.lock().unwrap().pop_front();
    let (status, payload) = match forced {
        Some(code) => (code, json!({"error": {"message": "scripted failure"}})),
        None if path.ends_with("/embeddings") => (200, embeddings(&body)),
        None => (200, chat(&body)),
    };
    st.requests.lock().unwrap().push(Recorded {
        path,
        authorization,
        body,
    });
    st.in_flight.fetch_sub(1, Ordering::SeqCst);
    let text = payload.to_string();
    let reason = if status == 200 { "OK" } else { "Error" };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
}

fn chat(body: &Value) -> Value {
    json!({
        "id": "chatcmpl-stub",
        "object": "chat.completion",
        "model": body["model"],
        "choices": [{"index": 0, "message": {"role": "assistant", "content": STUB_REPLY}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 2, "total_tokens": 13}
    })
}

/// Vector `[len(text), i, 1]`; rows are sent in reverse so clients must
/// honor `index`.
fn embeddings(body: &Value) -> Value {
    let inputs: Vec<String> = body["input"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_default();
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| json!({"object": "embedding", "index": i, "embedding": [t.chars().count() as f64, i as f64, 1.0]}))
        .collect();
    json!({"object": "list", "data": data, "model": body["model"]})
}

// ---------------------------------------------------------------------------
// Magic-token environment

pub const MAGIC: &str = "ZEBRA-7";
pub const CORRECT: &str = "def solve(x):\n    return x + 1\n";
pub const WRONG: &str = "def solve(x):\n    print(x)\n    return eval(str(x))\n";

/// Target mock: the correct program iff the rendered request carries the token.
pub fn target_script() -> MockScript {
    MockScript {
        rules: vec![MockRule::regex(regex::escape(MAGIC), CORRECT)],
        fallback: WRONG.into(),
        ..MockScript::default()
    }
}

/// Five rewrites served in a cycle; only the fourth carries the token, and
/// the second drops `{question}` so it is rejected.
pub fn reflection_pool() -> Vec<String> {
    [
        "Think step by step, then write the function.\n{question}".to_string(),
        "Write the function.".to_string(),
        "Write clean Python.\n{question}".to_string(),
        format!("Use the {MAGIC} convention.\n{{question}}"),
        "Be concise.\n{question}".to_string(),
    ]
    .into_iter()
    .map(|b| format!("```\n{b}\n```"))
    .collect()
}

pub fn reflection_script() -> MockScript {
    MockScript {
        queue: reflection_pool(),
        cycle_queue: true,
        ..MockScript::default()
    }
}

pub fn magic_task(n: usize) -> TaskSpec {
    TaskSpec {
        id: "increment".into(),
        kind: TaskKind::Alignment,
        instances: (0..n)
            .map(|i| TaskInstance {
                id: format!("q{i:02}"),
                question: format!("Problem {i}: implement solve(x) returning x plus one."),
                reference: Some(CORRECT.into()),
                entry_point: Some("solve".into()),
                external_check: None,
            })
            .collect(),
        metric: MetricSpec::new(MetricKind::TextSimilarity),
        info: "Implement a small Python function.".into(),
    }
}

pub fn seed_prompt() -> PromptTemplate {
    PromptTemplate::new("seed", "Solve the following problem in Python.\n{question}", PromptOrigin::Seed)
}

pub fn client(script: MockScript, name: &str, role: ModelRole) -> ModelClient {
    let backend = MockBackend::new(script).expect("valid mock script");
    ModelClient::new(
        Arc::new(Gateway::new(Arc::new(backend), 8)),
        ModelId::new(name, role).unwrap(),
        ModelSettings::named(name),
    )
}

pub fn evaluator(script: MockScript, name: &str, task: &TaskSpec) -> Evaluator {
    Evaluator::new(
        client(script, name, ModelRole::Target),
        task.metric,
        Arc::new(BehaviorScorer::with_defaults()),
        Arc::new(ArtifactDir::temporary().unwrap()),
    )
}
