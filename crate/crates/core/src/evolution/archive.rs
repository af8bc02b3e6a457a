use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EvolutionConfig, EvolutionError};
use crate::model::{combined_score, CandidateRecord, DomainError};
use crate::template::PromptTemplate;

/// Island population plus global-best bookkeeping.
///
/// Candidate ids and `created_at` values come from one logical counter,
/// so archives are reproducible under a deterministic backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandArchive {
    islands: Vec<Vec<CandidateRecord>>,
    global_best: String,
    generation_counter: u64,
    capacity: usize,
    lambda: f64,
    next_seq: u64,
}

/// Better-first ordering: higher combined score, then older record.
pub(crate) fn rank(a: &CandidateRecord, b: &CandidateRecord) -> Ordering {
    b.combined
        .partial_cmp(&a.combined)
        .unwrap_or(Ordering::Equal)
        .then(a.created_at.cmp(&b.created_at))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Exploitation,
    Exploration,
    Elite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub mode: SelectionMode,
    pub parent: CandidateRecord,
    pub inspirations: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationMove {
    pub from: usize,
    pub to: usize,
    pub source_id: String,
    pub new_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Migration {
    pub moves: Vec<MigrationMove>,
}

impl IslandArchive {
    /// One copy of `seed` per island, all with the seed's scores.
    pub fn seeded(
        seed: &PromptTemplate,
        mean_performance: f64,
        mean_behavior: f64,
        config: &EvolutionConfig,
    ) -> Result<Self, EvolutionError> {
        config.validate()?;
        let combined = combined_score(mean_performance, mean_behavior, config.lambda)
            .map_err(|e| EvolutionError::Config(e.to_string()))?;
        let mut archive = Self {
            islands: vec![Vec::new(); config.islands],
            global_best: String::new(),
            generation_counter: 0,
            capacity: config.archive_capacity,
            lambda: config.lambda,
            next_seq: 0,
        };
        for island in 0..config.islands {
            let (id, seq) = archive.next_id();
            archive.islands[island].push(CandidateRecord {
                candidate_id: id,
                prompt: seed.clone(),
                combined,
                mean_performance,
                mean_behavior,
                island,
                generation: 0,
                parent_id: None,
                created_at: seq,
            });
        }
        archive.recompute_global_best();
        Ok(archive)
    }

    /// Rebuilds an archive from stored parts and checks every invariant.
    pub fn from_parts(
        islands: Vec<Vec<CandidateRecord>>,
        global_best: String,
        generation_counter: u64,
        capacity: usize,
        lambda: f64,
    ) -> Result<Self, DomainError> {
        let next_seq = islands.iter().flatten().map(|r| r.created_at + 1).max().unwrap_or(0);
        let archive = Self {
            islands,
            global_best,
            generation_counter,
            capacity,
            lambda,
            next_seq,
        };
        archive.check_invariants()?;
        Ok(archive)
    }

    /// Next logical sequence number; ids and timestamps continue from here.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Restores a stored sequence position so evicted ids are not reused.
    pub fn resume_sequence(&mut self, next_seq: u64) {
        self.next_seq = self.next_seq.max(next_seq);
    }

    fn next_id(&mut self) -> (String, u64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        (format!("c{seq:06}"), seq)
    }

    pub fn islands(&self) -> &[Vec<CandidateRecord>] {
        &self.islands
    }

    pub fn island_count(&self) -> usize {
        self.islands.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn generation_counter(&self) -> u64 {
        self.generation_counter
    }

    pub fn len(&self) -> usize {
        self.islands.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &CandidateRecord> {
        self.islands.iter().flatten()
    }

    pub fn get(&self, id: &str) -> Option<&CandidateRecord> {
        self.records().find(|r| r.candidate_id == id)
    }

    pub fn global_best_id(&self) -> &str {
        &self.global_best
    }

    pub fn global_best(&self) -> &CandidateRecord {
        self.get(&self.global_best)
            .expect("global best always references a stored record")
    }

    pub fn recompute_global_best(&mut self) {
        if let Some(best) = self.records().min_by(|a, b| rank(a, b)) {
            self.global_best = best.candidate_id.clone();
        }
    }

    /// Inserts an evaluated child and advances the generation counter.
    /// Returns the new candidate id.
    pub fn add_child(
        &mut self,
        island: usize,
        prompt: PromptTemplate,
        mean_performance: f64,
        mean_behavior: f64,
        parent_id: Option<String>,
    ) -> Result<String, DomainError> {
        if island >= self.islands.len() {
            return Err(DomainError::Invalid(format!("island {island} out of range")));
        }
        let combined = combined_score(mean_performance, mean_behavior, self.lambda)?;
        let (id, seq) = self.next_id();
        self.generation_counter += 1;
        let mut prompt = prompt;
        prompt.id = id.clone();
        self.islands[island].push(CandidateRecord {
            candidate_id: id.clone(),
            prompt,
            combined,
            mean_performance,
            mean_behavior,
            island,
            generation: self.generation_counter,
            parent_id,
            created_at: seq,
        });
        self.recompute_global_best();
        Ok(id)
    }

    pub fn migration_due(&self, config: &EvolutionConfig) -> bool {
        self.generation_counter > 0 && self.generation_counter.is_multiple_of(config.migration_interval)
    }

    /// Ring migration: island `k` sends copies of its top
    /// `max(1, ⌈rate·|island_k|⌉)` records to island `(k+1) mod K`.
    /// Sizes are taken before any copy lands.
    pub fn migrate(&mut self, config: &EvolutionConfig) -> Migration {
        let k = self.islands.len();
        if k < 2 {
            return Migration::default();
        }
        let mut outgoing: Vec<Vec<CandidateRecord>> = Vec::with_capacity(k);
        for island in &self.islands {
            let m = ((config.migration_rate * island.len() as f64).ceil() as usize).max(1).min(island.len());
            let mut sorted: Vec<&CandidateRecord> = island.iter().collect();
            sorted.sort_by(|a, b| rank(a, b));
            outgoing.push(sorted.into_iter().take(m).cloned().collect());
        }
        let mut moves = Vec::new();
        for (from, migrants) in outgoing.into_iter().enumerate() {
            let to = (from + 1) % k;
            for src in migrants {
                let (id, seq) = self.next_id();
                moves.push(MigrationMove {
                    from,
                    to,
                    source_id: src.candidate_id.clone(),
                    new_id: id.clone(),
                });
                self.islands[to].push(CandidateRecord {
                    candidate_id: id,
                    island: to,
                    parent_id: Some(src.candidate_id.clone()),
                    created_at: seq,
                    ..src
                });
            }
        }
        self.recompute_global_best();
        Migration { moves }
    }

    /// Removes the weakest records (oldest first among equal scores) until
    /// the capacity holds. The global best and sole island members are
    /// never removed. Children of a removed
    /// record are re-parented to its parent so lineage stays resolvable.
    pub fn evict(&mut self) -> Vec<String> {
        let mut removed = Vec::new();
        while self.len() > self.capacity {
            let victim = self
                .islands
                .iter()
                .enumerate()
                .filter(|(_, isl)| isl.len() > 1)
                .flat_map(|(i, isl)| isl.iter().enumerate().map(move |(j, r)| (i, j, r)))
                .filter(|(_, _, r)| r.candidate_id != self.global_best)
                .min_by(|(_, _, a), (_, _, b)| {
                    // lowest combined; among equals the oldest goes first
                    a.combined
                        .partial_cmp(&b.combined)
                        .unwrap_or(Ordering::Equal)
                        .then(a.created_at.cmp(&b.created_at))
                })
                .map(|(i, j, _)| (i, j));
            let Some((i, j)) = victim else { break };
            let gone = self.islands[i].remove(j);
            for r in self.islands.iter_mut().flatten() {
                if r.parent_id.as_deref() == Some(gone.candidate_id.as_str()) {
                    r.parent_id = gone.parent_id.clone();
                }
            }
            removed.push(gone.candidate_id);
        }
        removed
    }

    pub fn check_invariants(&self) -> Result<(), DomainError> {
        let bad = |m: String| Err(DomainError::Invalid(m));
        if self.islands.is_empty() {
            return bad("archive has no islands".into());
        }
        if self.len() > self.capacity {
            return bad(format!("{} records exceed capacity {}", self.len(), self.capacity));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, island) in self.islands.iter().enumerate() {
            if island.is_empty() {
                return bad(format!("island {i} is empty"));
            }
            for r in island {
                if r.island != i {
                    return bad(format!("record {} claims island {} but sits on {i}", r.candidate_id, r.island));
                }
                if !ids.insert(r.candidate_id.as_str()) {
                    return bad(format!("duplicate candidate id {}", r.candidate_id));
                }
                r.verify_combined(self.lambda)?;
            }
        }
        for r in self.records() {
            if let Some(p) = &r.parent_id {
                if !ids.contains(p.as_str()) {
                    return bad(format!("record {} references missing parent {p}", r.candidate_id));
                }
            }
        }
        let Some(best) = self.get(&self.global_best) else {
            return bad(format!("global best {} is not stored", self.global_best));
        };
        if self.records().any(|r| rank(r, best) == Ordering::Less) {
            return bad(format!("global best {} is not the top record", self.global_best));
        }
        Ok(())
    }
}

/// Picks a parent on `island` and up to `inspiration_count` other top
/// records from the same island.
pub fn select_parent<R: Rng + ?Sized>(
    archive: &IslandArchive,
    island: usize,
    config: &EvolutionConfig,
    rng: &mut R,
) -> Selection {
    let members = &archive.islands[island];
    let draw: f64 = rng.gen();
    let mode = if draw < config.exploitation_ratio {
        SelectionMode::Exploitation
    } else if draw < config.exploitation_ratio + config.exploration_ratio {
        SelectionMode::Exploration
    } else {
        SelectionMode::Elite
    };
    let mut ranked: Vec<&CandidateRecord> = members.iter().collect();
    ranked.sort_by(|a, b| rank(a, b));

    let parent = if ranked.len() == 1 {
        ranked[0].clone()
    } else {
        match mode {
            SelectionMode::Exploitation => {
                let pool = ranked.len().div_ceil(2);
                ranked[rng.gen_range(0..pool)].clone()
            }
            SelectionMode::Exploration => ranked[rng.gen_range(0..ranked.len())].clone(),
            SelectionMode::Elite => archive.global_best().clone(),
        }
    };
    let inspirations = ranked
        .into_iter()
        .filter(|r| r.candidate_id != parent.candidate_id)
        .take(config.inspiration_count)
        .cloned()
        .collect();
    Selection {
        mode,
        parent,
        inspirations,
    }
}
