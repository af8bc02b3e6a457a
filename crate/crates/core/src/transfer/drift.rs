//! Source × target accuracy matrix and its transfer-gap companion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TransferError;
use crate::eval::Evaluator;
use crate::model::{mean_accuracy, to_percent, transfer_gap, DomainError, TaskSpec};
use crate::template::PromptTemplate;

/// A model taking part in the drift study, addressed by name.
#[derive(Debug, Clone)]
pub struct DriftModel {
    pub name: String,
    pub evaluator: Evaluator,
}

/// Rows are source models (whose optimal prompt is used), columns are
/// target models (which run it). Accuracies are fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftMatrix {
    pub task_id: String,
    pub labels: Vec<String>,
    pub runs: usize,
    pub accuracy: Vec<Vec<f64>>,
    /// `gap[s][t] = accuracy[s][t] - accuracy[t][t]`
    pub gap: Vec<Vec<f64>>,
}

impl DriftMatrix {
    pub fn from_accuracies(
        task_id: impl Into<String>,
        labels: Vec<String>,
        accuracy: Vec<Vec<f64>>,
        runs: usize,
    ) -> Result<Self, DomainError> {
        let n = labels.len();
        if n == 0 {
            return Err(DomainError::Empty("drift model list"));
        }
        if accuracy.len() != n || accuracy.iter().any(|r| r.len() != n) {
            return Err(DomainError::Invalid(format!("drift matrix must be {n}×{n}")));
        }
        let gap = (0..n)
            .map(|s| (0..n).map(|t| transfer_gap(accuracy[s][t], accuracy[t][t])).collect())
            .collect();
        Ok(Self {
            task_id: task_id.into(),
            labels,
            runs,
            accuracy,
            gap,
        })
    }

    fn csv(&self, values: &[Vec<f64>]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("source\\target").chain(self.labels.iter().map(String::as_str));
        w.write_record(header).expect("in-memory csv");
        for (label, row) in self.labels.iter().zip(values) {
            let cells = std::iter::once(label.clone()).chain(row.iter().map(|v| percent_2dp(*v)));
            w.write_record(cells).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 input")
    }

    /// Accuracy matrix as percentages with two decimals.
    pub fn accuracy_csv(&self) -> String {
        self.csv(&self.accuracy)
    }

    /// Gap matrix as percentage points with two decimals.
    pub fn gap_csv(&self) -> String {
        self.csv(&self.gap)
    }
}

fn percent_2dp(fraction: f64) -> String {
    let s = format!("{:.2}", to_percent(fraction));
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Evaluates every source model's optimal prompt on every target model.
/// Run `r` samples instances with seed `rng_seed + r`.
pub fn drift_matrix(
    models: &[DriftModel],
    optimal_prompts: &BTreeMap<String, PromptTemplate>,
    task: &TaskSpec,
    runs: usize,
    sample_size: Option<usize>,
    rng_seed: u64,
) -> Result<DriftMatrix, TransferError> {
    if models.is_empty() {
        return Err(TransferError::Config("drift needs at least one model".into()));
    }
    if runs == 0 {
        return Err(TransferError::Config("runs must be positive".into()));
    }
    let missing: Vec<&str> = models
        .iter()
        .map(|m| m.name.as_str())
        .filter(|n| !optimal_prompts.contains_key(*n))
        .collect();
    if !missing.is_empty() {
        return Err(TransferError::Config(format!(
            "no optimal prompt for model(s): {}",
            missing.join(", ")
        )));
    }

    let mut accuracy = vec![vec![0.0; models.len()]; models.len()];
    for (s, source) in models.iter().enumerate() {
        let prompt = &optimal_prompts[&source.name];
        for (t, target) in models.iter().enumerate() {
            let per_run = (0..runs as u64)
                .map(|r| {
                    target
                        .evaluator
                        .evaluate_batch(prompt, &task.instances, sample_size, rng_seed.wrapping_add(r))
                        .map(|b| b.pass_at_1)
                })
                .collect::<Result<Vec<f64>, _>>()?;
            accuracy[s][t] = mean_accuracy(&per_run).map_err(crate::eval::EvalError::from)?;
        }
    }
    let labels = models.iter().map(|m| m.name.clone()).collect();
    DriftMatrix::from_accuracies(task.id.clone(), labels, accuracy, runs)
        .map_err(|e| TransferError::Config(e.to_string()))
}
