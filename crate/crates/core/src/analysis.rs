//! Embedding-based similarity studies over prompts and mapping texts.
//!
//! `semantic_deltas` asks whether source→target rewrites move prompts in a
//! shared direction across tasks; `consistency_report` measures how similar
//! repeated runs of the same generation are.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, ModelClient};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("vectors differ in dimension ({0} vs {1})")]
    Dimension(usize, usize),
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("{0}")]
    TooFew(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    Cosine,
}

/// Square matrix of similarities. `None` marks an undefined entry, which
/// is exported as `null` in JSON and an empty CSV cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub metric: SimilarityMetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffDiagonalStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub matrix: SimilarityMatrix,
    pub stats: OffDiagonalStats,
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, AnalysisError> {
    if u.len() != v.len() {
        return Err(AnalysisError::Dimension(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(AnalysisError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

impl SimilarityMatrix {
    /// Pairwise cosine over `vectors`; rows whose vector is zero are
    /// undefined throughout, diagonal included.
    pub fn cosine_of(labels: Vec<String>, vectors: &[Vec<f64>]) -> Result<Self, AnalysisError> {
        let n = vectors.len();
        let mut values = vec![vec![None; n]; n];
        for i in 0..n {
            for j in i..n {
                let c = match cosine(&vectors[i], &vectors[j]) {
                    Ok(c) => Some(if i == j { 1.0 } else { c }),
                    Err(AnalysisError::ZeroVector) => None,
                    Err(e) => return Err(e),
                };
                values[i][j] = c;
                values[j][i] = c;
            }
        }
        Ok(Self {
            labels,
            values,
            metric: SimilarityMetric::Cosine,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Mean, min and max over defined off-diagonal entries of the upper triangle.
    pub fn off_diagonal_stats(&self) -> Option<OffDiagonalStats> {
        let vals: Vec<f64> = (0..self.len())
            .flat_map(|i| (i + 1..self.len()).filter_map(move |j| self.values[i][j]))
            .collect();
        if vals.is_empty() {
            return None;
        }
        Some(OffDiagonalStats {
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            min: vals.iter().copied().fold(f64::INFINITY, f64::min),
            max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: vals.len(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("label").chain(self.labels.iter().map(String::as_str));
        w.write_record(header).expect("in-memory csv");
        for (l, row) in self.labels.iter().zip(&self.values) {
            let cells = std::iter::once(l.clone()).chain(row.iter().map(|v| cell(*v)));
            w.write_record(cells).expect("in-memory csv");
        }
        finish(w)
    }

    /// `row,col,value` triples for plotting tools.
    pub fn to_long_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "col", "value"]).expect("in-memory csv");
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                w.write_record([self.labels[i].as_str(), self.labels[j].as_str(), &cell(*v)])
                    .expect("in-memory csv");
            }
        }
        finish(w)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 input")
}

/// Labeled (source, target) prompt texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub label: String,
    pub source: String,
    pub target: String,
}

/// Cosine matrix over the edit vectors `e(target) - e(source)`. All texts
/// go to the embedding model in one call.
pub fn semantic_deltas(pairs: &[PromptPair], embed: &ModelClient) -> Result<SimilarityMatrix, AnalysisError> {
    if pairs.len() < 2 {
        return Err(AnalysisError::TooFew("semantic deltas need at least 2 pairs".into()));
    }
    let texts: Vec<String> = pairs
        .iter()
        .flat_map(|p| [p.source.clone(), p.target.clone()])
        .collect();
    let vecs = embed.embed(&texts)?;
    let deltas: Vec<Vec<f64>> = vecs
        .chunks(2)
        .map(|st| st[1].iter().zip(&st[0]).map(|(t, s)| t - s).collect())
        .collect();
    SimilarityMatrix::cosine_of(pairs.iter().map(|p| p.label.clone()).collect(), &deltas)
}

/// Pairwise similarity of repeated run outputs, labeled `run1..runN`.
pub fn consistency_report(run_outputs: &[String], embed: &ModelClient) -> Result<ConsistencyReport, AnalysisError> {
    if run_outputs.len() < 2 {
        return Err(AnalysisError::TooFew("consistency needs at least 2 runs".into()));
    }
    let vecs = embed.embed(run_outputs)?;
    if vecs.iter().any(|v| v.iter().all(|x| *x == 0.0)) {
        return Err(AnalysisError::ZeroVector);
    }
    let labels = (1..=run_outputs.len()).map(|i| format!("run{i}")).collect();
    let matrix = SimilarityMatrix::cosine_of(labels, &vecs)?;
    let stats = matrix
        .off_diagonal_stats()
        .expect("at least two defined rows give one off-diagonal entry");
    Ok(ConsistencyReport { matrix, stats })
}
