//! Run configuration and the JSON input files the CLI reads.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::behavior::{BehaviorError, BehaviorScorer, BehaviorWeights, PatternConfig, SyntaxCheckerConfig};
use crate::eval::{ArtifactDir, Evaluator, MetricSpec};
use crate::evolution::EvolutionConfig;
use crate::gateway::{BackendConfig, Gateway, GatewayError, ModelClient, ModelSettings};
use crate::model::{ModelId, ModelRole, TaskSpec};
use crate::template::{PromptOrigin, PromptTemplate};
use crate::transfer::AlignmentPair;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("role `{0}` is not configured (needs both a backend and a model entry)")]
    MissingRole(ModelRole),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorSection {
    pub weights: BehaviorWeights,
    pub patterns: PatternConfig,
    pub syntax_checker: SyntaxCheckerConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub database: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    /// Where `{instance_id}.code` files go; a temporary directory if unset.
    pub artifacts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    /// Roles whose models take part, in matrix order.
    pub models: Vec<ModelRole>,
    pub sample_size: Option<usize>,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            models: vec![ModelRole::Source, ModelRole::Target],
            sample_size: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backends: BTreeMap<ModelRole, BackendConfig>,
    pub models: BTreeMap<ModelRole, ModelSettings>,
    pub evolution: EvolutionConfig,
    /// Overrides the metric declared in task files.
    pub metric: Option<MetricSpec>,
    pub behavior: BehaviorSection,
    pub paths: PathsConfig,
    /// Timestamp written into mappings instead of the wall clock.
    pub fixed_clock: Option<u64>,
    pub keep_artifacts: bool,
    pub drift: DriftConfig,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    serde_json::from_str(&read(path)?).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = load_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (role, b) in &self.backends {
            b.validate()
                .map_err(|e| ConfigError::Invalid(format!("backend `{role}`: {e}")))?;
        }
        for (role, m) in &self.models {
            if m.name.trim().is_empty() {
                return Err(ConfigError::Invalid(format!("model `{role}` has an empty name")));
            }
        }
        self.behavior.weights.validate()?;
        self.evolution
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(m) = &self.metric {
            m.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }

    pub fn clock(&self) -> u64 {
        self.fixed_clock.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
    }

    pub fn require(&self, roles: &[ModelRole]) -> Result<(), ConfigError> {
        for r in roles {
            if !self.backends.contains_key(r) || !self.models.contains_key(r) {
                return Err(ConfigError::MissingRole(*r));
            }
        }
        Ok(())
    }

    pub fn model_id(&self, role: ModelRole) -> Result<ModelId, ConfigError> {
        let m = self.models.get(&role).ok_or(ConfigError::MissingRole(role))?;
        ModelId::new(m.name.clone(), role).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// A client with its own gateway for `role`.
    pub fn client(&self, role: ModelRole) -> Result<ModelClient, ConfigError> {
        self.require(&[role])?;
        let gateway = Gateway::from_config(&self.backends[&role])?;
        Ok(ModelClient::new(Arc::new(gateway), self.model_id(role)?, self.models[&role].clone()))
    }

    pub fn scorer(&self) -> Result<Arc<BehaviorScorer>, ConfigError> {
        let checker = self.behavior.syntax_checker.build()?;
        Ok(Arc::new(BehaviorScorer::new(
            self.behavior.weights,
            &self.behavior.patterns,
            checker,
        )?))
    }

    pub fn artifacts(&self) -> Result<Arc<ArtifactDir>, ConfigError> {
        let dir = match &self.paths.artifacts {
            Some(p) => ArtifactDir::at(p, self.keep_artifacts),
            None => ArtifactDir::temporary(),
        };
        dir.map(Arc::new).map_err(|source| ConfigError::Io {
            path: self.paths.artifacts.clone().unwrap_or_default(),
            source,
        })
    }

    pub fn metric_for(&self, task: &TaskSpec) -> MetricSpec {
        self.metric.unwrap_or(task.metric)
    }

    pub fn evaluator(&self, role: ModelRole, task: &TaskSpec) -> Result<Evaluator, ConfigError> {
        Ok(Evaluator::new(
            self.client(role)?,
            self.metric_for(task),
            self.scorer()?,
            self.artifacts()?,
        ))
    }
}

pub fn load_task(path: &Path) -> Result<TaskSpec, ConfigError> {
    let task: TaskSpec = load_json(path)?;
    task.validate()
        .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(task)
}

/// A prompt file is either a JSON template or plain text. Plain text gets
/// the file stem as id and `origin`.
pub fn load_prompt(path: &Path, origin: PromptOrigin) -> Result<PromptTemplate, ConfigError> {
    let text = read(path)?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let prompt = if is_json {
        serde_json::from_str::<PromptTemplate>(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?
    } else {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "prompt".into());
        PromptTemplate::new(id, text.trim_end_matches('\n'), origin)
    };
    prompt
        .validate()
        .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(prompt)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PromptField {
    Template(PromptTemplate),
    Text(String),
}

impl PromptField {
    fn into_template(self, id: String) -> PromptTemplate {
        match self {
            PromptField::Template(t) => t,
            PromptField::Text(body) => PromptTemplate::new(id, body, PromptOrigin::Manual),
        }
    }
}

#[derive(Deserialize)]
struct RawPair {
    task_id: String,
    source_prompt: PromptField,
    target_prompt: PromptField,
    #[serde(default)]
    dataset_info: String,
}

/// Alignment pairs; each prompt may be a full template or a plain string.
pub fn load_pairs(path: &Path) -> Result<Vec<AlignmentPair>, ConfigError> {
    let raw: Vec<RawPair> = load_json(path)?;
    Ok(raw
        .into_iter()
        .map(|r| AlignmentPair {
            source_prompt: r.source_prompt.into_template(format!("{}-source", r.task_id)),
            target_prompt: r.target_prompt.into_template(format!("{}-target", r.task_id)),
            task_id: r.task_id,
            dataset_info: r.dataset_info,
        })
        .collect())
}
