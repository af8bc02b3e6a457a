//! JSON-lines event stream of a calibration run.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::archive::{MigrationMove, SelectionMode};

/// One line of the trace. Wall-clock values are deliberately absent so a
/// trace is a pure function of configuration and backend script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Init {
        task_id: String,
        seed_id: String,
        calibration_ids: Vec<String>,
        islands: usize,
        mean_performance: f64,
        mean_behavior: f64,
        combined: f64,
    },
    Probe {
        iteration: usize,
        instance_id: String,
        candidate_id: String,
        performance: f64,
        behavior: f64,
        solved: bool,
    },
    Mutation {
        iteration: usize,
        instance_id: String,
        step: usize,
        island: usize,
        mode: SelectionMode,
        parent_id: String,
        child_id: String,
        mean_performance: f64,
        mean_behavior: f64,
        combined: f64,
        generation: u64,
    },
    MutationFailed {
        iteration: usize,
        instance_id: String,
        step: usize,
        island: usize,
        mode: SelectionMode,
        parent_id: String,
        reason: String,
    },
    Migration {
        generation: u64,
        moves: Vec<MigrationMove>,
    },
    Eviction {
        candidate_ids: Vec<String>,
    },
    IterationEnd {
        iteration: usize,
        best_id: String,
        best_combined: f64,
        target_calls: u64,
        reflection_calls: u64,
    },
}

/// Keeps events in memory and, when opened on a file, appends each event
/// as it happens so an interrupted run still leaves a usable trace.
#[derive(Debug, Default)]
pub struct TraceLog {
    events: Vec<TraceEvent>,
    sink: Option<BufWriter<File>>,
}

impl TraceLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            events: Vec::new(),
            sink: Some(BufWriter::new(File::create(path)?)),
        })
    }

    pub fn push(&mut self, event: TraceEvent) -> std::io::Result<()> {
        if let Some(w) = self.sink.as_mut() {
            serde_json::to_writer(&mut *w, &event)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }

    pub fn to_jsonl(events: &[TraceEvent]) -> String {
        events
            .iter()
            .map(|e| serde_json::to_string(e).expect("trace events serialize") + "\n")
            .collect()
    }

    /// Best combined score at the end of each global iteration.
    pub fn best_curve(events: &[TraceEvent]) -> Vec<f64> {
        events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::IterationEnd { best_combined, .. } => Some(*best_combined),
                _ => None,
            })
            .collect()
    }
}
