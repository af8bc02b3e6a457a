//! The calibration loop: probe, reflect, evaluate, insert, migrate.

use std::collections::{HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::archive::{select_parent, IslandArchive};
use super::reflect::{reflect_and_mutate, FeedbackItem, ReflectionQuery};
use super::trace::{TraceEvent, TraceLog};
use super::{EvolutionConfig, EvolutionError};
use crate::eval::{BatchResult, Evaluator};
use crate::gateway::ModelClient;
use crate::model::{EvalOutcome, TaskInstance, TaskSpec};
use crate::template::PromptTemplate;
use crate::text::excerpt;

const FEEDBACK_LIMIT: usize = 5;

/// Everything that changes while a calibration runs.
#[derive(Debug)]
pub struct CalibrationState {
    pub archive: IslandArchive,
    pub trace: TraceLog,
    /// Indices into the task's instances, in evaluation order.
    pub calibration: Vec<usize>,
    pub target_calls: u64,
    pub reflection_calls: u64,
    rng: ChaCha8Rng,
    cursor: usize,
    replay: VecDeque<usize>,
    feedback: HashMap<String, Vec<FeedbackItem>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub skipped: bool,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug)]
pub struct CalibrationResult {
    pub best: PromptTemplate,
    pub archive: IslandArchive,
    pub trace: Vec<TraceEvent>,
}

impl CalibrationResult {
    pub fn best_curve(&self) -> Vec<f64> {
        TraceLog::best_curve(&self.trace)
    }
}

/// Fixed inputs of one calibration run.
pub struct Calibrator<'a> {
    pub task: &'a TaskSpec,
    pub target: &'a Evaluator,
    pub reflection: &'a ModelClient,
    pub config: &'a EvolutionConfig,
}

fn feedback_item(instance: &TaskInstance, outcome: &EvalOutcome, threshold: f64) -> FeedbackItem {
    let failure_note = outcome.note.clone().or_else(|| {
        (!outcome.solved).then(|| {
            format!(
                "not solved (performance {:.3} below {:.3})",
                outcome.performance, threshold
            )
        })
    });
    FeedbackItem {
        instance_excerpt: excerpt(&instance.question, 200),
        response_excerpt: excerpt(&outcome.response, 300),
        performance: outcome.performance,
        behavior: outcome.behavior,
        failure_note,
    }
}

impl<'a> Calibrator<'a> {
    fn feedback_for(&self, instances: &[&TaskInstance], batch: &BatchResult) -> Vec<FeedbackItem> {
        let threshold = self.target.metric().solved_threshold;
        let mut items: Vec<(bool, FeedbackItem)> = instances
            .iter()
            .zip(&batch.outcomes)
            .map(|(i, o)| (o.solved, feedback_item(i, o, threshold)))
            .collect();
        // failures first, original order otherwise
        items.sort_by_key(|(solved, _)| *solved);
        items.into_iter().take(FEEDBACK_LIMIT).map(|(_, f)| f).collect()
    }

    fn task_description(&self) -> String {
        if self.task.info.trim().is_empty() {
            format!("Task `{}`.", self.task.id)
        } else {
            format!("Task `{}`: {}", self.task.id, self.task.info.trim())
        }
    }

    /// Evaluates the seed on the calibration sample and fills every island
    /// with a copy of it. Rendering is checked before any model call.
    pub fn initialize(&self, seed: &PromptTemplate, mut trace: TraceLog) -> Result<CalibrationState, EvolutionError> {
        self.config.validate()?;
        self.task
            .validate()
            .map_err(|e| EvolutionError::Config(e.to_string()))?;
        seed.validate()
            .map_err(|e| EvolutionError::Config(format!("seed prompt: {e}")))?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        let n = self.task.instances.len();
        let k = self.config.n_calibration.min(n);
        let mut calibration = rand::seq::index::sample(&mut rng, n, k).into_vec();
        calibration.sort_unstable();
        let instances: Vec<&TaskInstance> = calibration.iter().map(|&i| &self.task.instances[i]).collect();
        for inst in &instances {
            Evaluator::messages(seed, inst)?;
        }

        let batch = self.target.evaluate_all(seed, &instances)?;
        let archive = IslandArchive::seeded(seed, batch.mean_performance, batch.mean_behavior, self.config)?;
        let seed_feedback = self.feedback_for(&instances, &batch);
        let feedback = archive
            .records()
            .map(|r| (r.candidate_id.clone(), seed_feedback.clone()))
            .collect();
        trace.push(TraceEvent::Init {
            task_id: self.task.id.clone(),
            seed_id: seed.id.clone(),
            calibration_ids: instances.iter().map(|i| i.id.clone()).collect(),
            islands: self.config.islands,
            mean_performance: batch.mean_performance,
            mean_behavior: batch.mean_behavior,
            combined: archive.global_best().combined,
        })?;
        Ok(CalibrationState {
            archive,
            trace,
            calibration,
            target_calls: instances.len() as u64,
            reflection_calls: 0,
            rng,
            cursor: 0,
            replay: VecDeque::new(),
            feedback,
        })
    }

    /// One calibration instance: probe the global best and, if it fails,
    /// run the local reflective chain.
    pub fn evolve_step(
        &self,
        state: &mut CalibrationState,
        iteration: usize,
        instance_idx: usize,
    ) -> Result<StepSummary, EvolutionError> {
        let instance = &self.task.instances[instance_idx];
        let best = state.archive.global_best().clone();
        let probe = self.target.evaluate_instance(&best.prompt, instance)?;
        state.target_calls += 1;
        state.trace.push(TraceEvent::Probe {
            iteration,
            instance_id: instance.id.clone(),
            candidate_id: best.candidate_id.clone(),
            performance: probe.performance,
            behavior: probe.behavior,
            solved: probe.solved,
        })?;
        if probe.solved {
            return Ok(StepSummary { skipped: true, accepted: 0, rejected: 0 });
        }

        let mut batch_idx = vec![instance_idx];
        batch_idx.extend(
            state
                .replay
                .iter()
                .copied()
                .filter(|&i| i != instance_idx)
                .take(self.config.replay_size),
        );
        state.replay.retain(|&i| i != instance_idx);
        state.replay.push_front(instance_idx);
        state.replay.truncate(self.config.replay_size);
        let batch_instances: Vec<&TaskInstance> = batch_idx.iter().map(|&i| &self.task.instances[i]).collect();
        let probe_feedback = vec![feedback_item(instance, &probe, self.target.metric().solved_threshold)];

        let mut summary = StepSummary { skipped: false, accepted: 0, rejected: 0 };
        let islands = state.archive.island_count();
        for step in 1..=self.config.local_steps {
            let island = state.cursor;
            state.cursor = (state.cursor + 1) % islands;
            let sel = select_parent(&state.archive, island, self.config, &mut state.rng);
            let query = ReflectionQuery {
                task_description: self.task_description(),
                current_template: sel.parent.prompt.clone(),
                feedback: state
                    .feedback
                    .get(&sel.parent.candidate_id)
                    .cloned()
                    .unwrap_or_else(|| probe_feedback.clone()),
                inspirations: sel
                    .inspirations
                    .iter()
                    .map(|r| (r.prompt.body.clone(), r.combined))
                    .collect(),
            };
            state.reflection_calls += 1;
            let child = match reflect_and_mutate(&query, self.reflection, "pending") {
                Ok(c) => c,
                Err(e) => {
                    summary.rejected += 1;
                    state.trace.push(TraceEvent::MutationFailed {
                        iteration,
                        instance_id: instance.id.clone(),
                        step,
                        island,
                        mode: sel.mode,
                        parent_id: sel.parent.candidate_id.clone(),
                        reason: e.to_string(),
                    })?;
                    continue;
                }
            };
            let result = self.target.evaluate_all(&child, &batch_instances)?;
            state.target_calls += batch_instances.len() as u64;
            let child_id = state
                .archive
                .add_child(
                    island,
                    child,
                    result.mean_performance,
                    result.mean_behavior,
                    Some(sel.parent.candidate_id.clone()),
                )
                .map_err(|e| EvolutionError::Config(e.to_string()))?;
            summary.accepted += 1;
            state
                .feedback
                .insert(child_id.clone(), self.feedback_for(&batch_instances, &result));
            let rec = state.archive.get(&child_id).expect("child was just inserted").clone();
            state.trace.push(TraceEvent::Mutation {
                iteration,
                instance_id: instance.id.clone(),
                step,
                island,
                mode: sel.mode,
                parent_id: sel.parent.candidate_id.clone(),
                child_id,
                mean_performance: rec.mean_performance,
                mean_behavior: rec.mean_behavior,
                combined: rec.combined,
                generation: rec.generation,
            })?;
            if state.archive.migration_due(self.config) {
                let migration = state.archive.migrate(self.config);
                for mv in &migration.moves {
                    if let Some(f) = state.feedback.get(&mv.source_id).cloned() {
                        state.feedback.insert(mv.new_id.clone(), f);
                    }
                }
                state.trace.push(TraceEvent::Migration {
                    generation: state.archive.generation_counter(),
                    moves: migration.moves,
                })?;
            }
            let evicted = state.archive.evict();
            if !evicted.is_empty() {
                for id in &evicted {
                    state.feedback.remove(id);
                }
                state.trace.push(TraceEvent::Eviction { candidate_ids: evicted })?;
            }
        }
        state.archive.recompute_global_best();
        Ok(summary)
    }

    pub fn run(&self, seed: &PromptTemplate, trace: TraceLog) -> Result<CalibrationResult, EvolutionError> {
        let mut state = self.initialize(seed, trace)?;
        let order = state.calibration.clone();
        for iteration in 1..=self.config.global_iters {
            for &idx in &order {
                self.evolve_step(&mut state, iteration, idx)?;
            }
            let best = state.archive.global_best();
            let event = TraceEvent::IterationEnd {
                iteration,
                best_id: best.candidate_id.clone(),
                best_combined: best.combined,
                target_calls: state.target_calls,
                reflection_calls: state.reflection_calls,
            };
            state.trace.push(event)?;
        }
        Ok(CalibrationResult {
            best: state.archive.global_best().prompt.clone(),
            archive: state.archive,
            trace: state.trace.into_events(),
        })
    }
}

/// Runs the full calibration and returns the best prompt with its archive
/// and trace.
pub fn run_calibration(
    task: &TaskSpec,
    seed: &PromptTemplate,
    target: &Evaluator,
    reflection: &ModelClient,
    config: &EvolutionConfig,
    trace: TraceLog,
) -> Result<CalibrationResult, EvolutionError> {
    Calibrator {
        task,
        target,
        reflection,
        config,
    }
    .run(seed, trace)
}
