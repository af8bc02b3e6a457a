//! Island-based reflective prompt evolution.
//!
//! A seed prompt is copied onto `K` islands. For every calibration instance
//! the current global best is probed; when it fails, `L` local steps each
//! pick a parent on the next island (round robin), ask the reflection model
//! for a rewrite, evaluate the child and insert it. Every
//! `migration_interval` accepted children the top records of each island are
//! copied to its ring neighbour.

mod archive;
mod calibrate;
mod reflect;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalError;

pub use archive::{select_parent, IslandArchive, Migration, MigrationMove, Selection, SelectionMode};
pub use calibrate::{run_calibration, CalibrationResult, CalibrationState, Calibrator, StepSummary};
pub use reflect::{
    reflect_and_mutate, reflection_messages, FeedbackItem, MutationError, ReflectionQuery, REFLECTION_SYSTEM_PROMPT,
};
pub use trace::{TraceEvent, TraceLog};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("evolution config: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("trace: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub n_calibration: usize,
    pub global_iters: usize,
    pub local_steps: usize,
    pub islands: usize,
    pub archive_capacity: usize,
    pub exploitation_ratio: f64,
    pub exploration_ratio: f64,
    pub elite_ratio: f64,
    pub migration_interval: u64,
    pub migration_rate: f64,
    pub lambda: f64,
    pub inspiration_count: usize,
    pub rng_seed: u64,
    /// Recent failed instances re-evaluated alongside the current one.
    pub replay_size: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            n_calibration: 20,
            global_iters: 20,
            local_steps: 10,
            islands: 3,
            archive_capacity: 1000,
            exploitation_ratio: 0.7,
            exploration_ratio: 0.2,
            elite_ratio: 0.1,
            migration_interval: 50,
            migration_rate: 0.1,
            lambda: 0.8,
            inspiration_count: 2,
            rng_seed: 0,
            replay_size: 3,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: String| Err(EvolutionError::Config(m));
        let ratios = [self.exploitation_ratio, self.exploration_ratio, self.elite_ratio];
        if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("selection ratios must be nonnegative".into());
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("selection ratios sum to {sum}, expected 1"));
        }
        if self.islands == 0 {
            return bad("islands must be positive".into());
        }
        if self.archive_capacity < self.islands {
            return bad(format!(
                "archive_capacity {} is smaller than the {} islands",
                self.archive_capacity, self.islands
            ));
        }
        if self.n_calibration == 0 || self.local_steps == 0 || self.migration_interval == 0 {
            return bad("n_calibration, local_steps and migration_interval must be positive".into());
        }
        if !(self.migration_rate > 0.0 && self.migration_rate <= 1.0) {
            return bad(format!("migration_rate {} is outside (0, 1]", self.migration_rate));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} is outside [0, 1]", self.lambda));
        }
        Ok(())
    }
}
