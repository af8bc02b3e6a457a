//! Scoring model responses against task instances.
//!
//! Two metric kinds: token-F1 text similarity against a reference answer,
//! and an external pass/fail command run on the extracted code. Batches are
//! evaluated concurrently (bounded by the gateway) and aggregated to pass@1.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::BehaviorScorer;
use crate::gateway::{Message, ModelClient};
use crate::model::{DomainError, EvalOutcome, TaskInstance};
use crate::process::{run_with_timeout, CommandStatus};
use crate::template::{PromptTemplate, TemplateError};
use crate::text::extract_code;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prompt `{prompt}` cannot be rendered for instance `{instance}`: {source}")]
    Render {
        prompt: String,
        instance: String,
        #[source]
        source: TemplateError,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("artifact directory: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    TextSimilarity,
    ExternalExec,
}

impl MetricKind {
    pub fn default_threshold(self) -> f64 {
        match self {
            MetricKind::TextSimilarity => 0.95,
            MetricKind::ExternalExec => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryPointSource {
    #[default]
    Instance,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMetricSpec")]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub solved_threshold: f64,
    pub behavior_enabled: bool,
    pub entry_point_source: EntryPointSource,
}

#[derive(Deserialize)]
struct RawMetricSpec {
    kind: MetricKind,
    #[serde(default)]
    solved_threshold: Option<f64>,
    #[serde(default = "yes")]
    behavior_enabled: bool,
    #[serde(default)]
    entry_point_source: EntryPointSource,
}

fn yes() -> bool {
    true
}

impl TryFrom<RawMetricSpec> for MetricSpec {
    type Error = DomainError;

    fn try_from(raw: RawMetricSpec) -> Result<Self, Self::Error> {
        let spec = MetricSpec {
            kind: raw.kind,
            solved_threshold: raw.solved_threshold.unwrap_or(raw.kind.default_threshold()),
            behavior_enabled: raw.behavior_enabled,
            entry_point_source: raw.entry_point_source,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl MetricSpec {
    pub fn new(kind: MetricKind) -> Self {
        Self {
            kind,
            solved_threshold: kind.default_threshold(),
            behavior_enabled: true,
            entry_point_source: EntryPointSource::Instance,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.solved_threshold > 0.0 && self.solved_threshold <= 1.0 {
            Ok(())
        } else {
            Err(DomainError::Invalid(format!(
                "solved_threshold {} is outside (0, 1]",
                self.solved_threshold
            )))
        }
    }
}

fn default_check_timeout() -> u64 {
    10_000
}

/// An external grader: `command[0] command[1..]` with `{code_file}` and
/// `{instance_id}` substituted in the arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCheckSpec {
    pub command: Vec<String>,
    #[serde(default = "default_check_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub pass_exit_code: i32,
}

/// Whitespace-token bag-overlap F1.
pub fn text_similarity(prediction: &str, reference: &str) -> f64 {
    let pred: Vec<&str> = prediction.split_whitespace().collect();
    let refs: Vec<&str> = reference.split_whitespace().collect();
    match (pred.is_empty(), refs.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &refs {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pred {
        if let Some(n) = counts.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / refs.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Directory holding `{instance_id}.code` files for external checks.
#[derive(Debug)]
pub struct ArtifactDir {
    path: PathBuf,
    keep: bool,
    _temp: Option<tempfile::TempDir>,
}

impl ArtifactDir {
    pub fn temporary() -> std::io::Result<Self> {
        let temp = tempfile::Builder::new().prefix("promptbridge-").tempdir()?;
        Ok(Self {
            path: temp.path().to_path_buf(),
            keep: false,
            _temp: Some(temp),
        })
    }

    pub fn at(path: impl Into<PathBuf>, keep: bool) -> std::io::Result<Self> {
        let path = path.into();
        std::fs::create_dir_all(&path)?;
        Ok(Self { path, keep, _temp: None })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn code_file(&self, instance_id: &str) -> PathBuf {
        let safe: String = instance_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
            .collect();
        self.path.join(format!("{safe}.code"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub instance_ids: Vec<String>,
    pub outcomes: Vec<EvalOutcome>,
    pub mean_performance: f64,
    pub mean_behavior: f64,
    pub pass_at_1: f64,
}

impl BatchResult {
    fn from_outcomes(instance_ids: Vec<String>, outcomes: Vec<EvalOutcome>) -> Self {
        let n = outcomes.len().max(1) as f64;
        let mean_performance = outcomes.iter().map(|o| o.performance).sum::<f64>() / n;
        let mean_behavior = outcomes.iter().map(|o| o.behavior).sum::<f64>() / n;
        let pass_at_1 = outcomes.iter().filter(|o| o.solved).count() as f64 / n;
        Self {
            instance_ids,
            outcomes,
            mean_performance,
            mean_behavior,
            pass_at_1,
        }
    }
}

/// Indices of a seeded sample without replacement, in ascending order.
pub fn sample_indices(len: usize, sample_size: Option<usize>, seed: u64) -> Result<Vec<usize>, DomainError> {
    if len == 0 {
        return Err(DomainError::Empty("instance list"));
    }
    match sample_size {
        None => Ok((0..len).collect()),
        Some(0) => Err(DomainError::Invalid("sample_size must be positive".into())),
        Some(k) if k > len => Err(DomainError::Invalid(format!(
            "sample_size {k} exceeds the {len} available instances"
        ))),
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, len, k).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
    }
}

/// Evaluates prompts for one model under one metric.
#[derive(Debug, Clone)]
pub struct Evaluator {
    client: ModelClient,
    metric: MetricSpec,
    scorer: Arc<BehaviorScorer>,
    artifacts: Arc<ArtifactDir>,
    model_failures: Arc<AtomicU64>,
}

impl Evaluator {
    pub fn new(
        client: ModelClient,
        metric: MetricSpec,
        scorer: Arc<BehaviorScorer>,
        artifacts: Arc<ArtifactDir>,
    ) -> Self {
        Self {
            client,
            metric,
            scorer,
            artifacts,
            model_failures: Arc::default(),
        }
    }

    /// Model calls that failed after the gateway's retries and were scored
    /// as zero outcomes.
    pub fn model_failures(&self) -> u64 {
        self.model_failures.load(Ordering::Relaxed)
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.metric
    }

    pub fn client(&self) -> &ModelClient {
        &self.client
    }

    /// Bindings available to a prompt when evaluated on `instance`.
    pub fn bindings(instance: &TaskInstance) -> BTreeMap<String, String> {
        let mut b = BTreeMap::new();
        b.insert("question".to_string(), instance.question.clone());
        b.insert("instance_id".to_string(), instance.id.clone());
        if let Some(ep) = &instance.entry_point {
            b.insert("entry_point".to_string(), ep.clone());
        }
        b
    }

    /// Chat messages for `prompt` on `instance`. A template without a
    /// `{question}` hole becomes the system message and the question is
    /// sent as the user turn.
    pub fn messages(prompt: &PromptTemplate, instance: &TaskInstance) -> Result<Vec<Message>, EvalError> {
        let rendered = prompt
            .render(&Self::bindings(instance))
            .map_err(|source| EvalError::Render {
                prompt: prompt.id.clone(),
                instance: instance.id.clone(),
                source,
            })?;
        Ok(if prompt.placeholders.contains("question") {
            vec![Message::user(rendered.text)]
        } else {
            vec![Message::system(rendered.text), Message::user(instance.question.clone())]
        })
    }

    pub fn evaluate_instance(&self, prompt: &PromptTemplate, instance: &TaskInstance) -> Result<EvalOutcome, EvalError> {
        let messages = Self::messages(prompt, instance)?;
        let started = Instant::now();
        let response = match self.client.chat(messages) {
            Ok(r) => r.content,
            Err(e) => {
                let ms = started.elapsed().as_millis() as u64;
                log::warn!("model call failed on `{}`: {e}", instance.id);
                self.model_failures.fetch_add(1, Ordering::Relaxed);
                return Ok(EvalOutcome::failed(format!("model error: {e}"), ms));
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        let mut note = None;
        let performance = match self.metric.kind {
            MetricKind::TextSimilarity => {
                text_similarity(&response, instance.reference.as_deref().unwrap_or_default())
            }
            MetricKind::ExternalExec => match &instance.external_check {
                Some(check) => {
                    let (passed, n) = self.run_check(check, instance, extract_code(&response));
                    note = n;
                    if passed { 1.0 } else { 0.0 }
                }
                None => {
                    note = Some("instance has no external_check".into());
                    0.0
                }
            },
        };

        let behavior = if self.metric.behavior_enabled {
            let entry = match self.metric.entry_point_source {
                EntryPointSource::Instance => instance.entry_point.as_deref(),
                EntryPointSource::None => None,
            };
            self.scorer.score(extract_code(&response), entry).score
        } else {
            performance
        };

        Ok(EvalOutcome {
            performance,
            behavior,
            solved: performance >= self.metric.solved_threshold,
            response,
            latency_ms,
            note,
        })
    }

    fn run_check(&self, check: &ExternalCheckSpec, instance: &TaskInstance, code: &str) -> (bool, Option<String>) {
        let Some(program) = check.command.first() else {
            return (false, Some("external check command is empty".into()));
        };
        let file = self.artifacts.code_file(&instance.id);
        if let Err(e) = std::fs::write(&file, code) {
            return (false, Some(format!("cannot write {}: {e}", file.display())));
        }
        let file_arg = file.display().to_string();
        let args: Vec<String> = check.command[1..]
            .iter()
            .map(|a| a.replace("{code_file}", &file_arg).replace("{instance_id}", &instance.id))
            .collect();
        let status = run_with_timeout(
            program,
            &args,
            Some(self.artifacts.path()),
            Duration::from_millis(check.timeout_ms),
        );
        if !self.artifacts.keep {
            let _ = std::fs::remove_file(&file);
        }
        match status {
            Ok(CommandStatus::Exited(code)) if code == check.pass_exit_code => (true, None),
            Ok(CommandStatus::Exited(code)) => (false, Some(format!("external check exited with {code}"))),
            Ok(CommandStatus::Killed) => (false, Some("external check killed by signal".into())),
            Ok(CommandStatus::TimedOut) => (false, Some(format!("external check timed out after {} ms", check.timeout_ms))),
            Err(e) => (false, Some(format!("external check failed to start: {e}"))),
        }
    }

    /// Evaluates every instance, concurrently; outcomes follow input order.
    pub fn evaluate_all(&self, prompt: &PromptTemplate, instances: &[&TaskInstance]) -> Result<BatchResult, EvalError> {
        if instances.is_empty() {
            return Err(DomainError::Empty("instance list").into());
        }
        let outcomes = instances
            .par_iter()
            .map(|inst| self.evaluate_instance(prompt, inst))
            .collect::<Result<Vec<_>, _>>()?;
        let ids = instances.iter().map(|i| i.id.clone()).collect();
        Ok(BatchResult::from_outcomes(ids, outcomes))
    }

    /// Evaluates a seeded sample (or all) of `instances`.
    pub fn evaluate_batch(
        &self,
        prompt: &PromptTemplate,
        instances: &[TaskInstance],
        sample_size: Option<usize>,
        rng_seed: u64,
    ) -> Result<BatchResult, EvalError> {
        let idx = sample_indices(instances.len(), sample_size, rng_seed)?;
        let chosen: Vec<&TaskInstance> = idx.iter().map(|&i| &instances[i]).collect();
        self.evaluate_all(prompt, &chosen)
    }
}
