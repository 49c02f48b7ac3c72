//! The proxy active-learning loop: per-iteration proxy training with
//! distillation, selection, annotation hand-off, background main-model
//! training and signal computation.
//!
//! A [`Project`] is the single writer of its [`ProjectState`]. With a project
//! directory every transition is persisted before the call returns:
//!
//! ```text
//! project.json                 config and state
//! iterations/<t>/selection.json
//! iterations/<t>/record.json   timings of iteration t
//! iterations/<t>/signals.json  main-model signals for the batch of iteration t
//! checkpoints/main-<t>/        main model trained on the data labeled before t
//! checkpoints/proxy/           latest proxy
//! export/                      written by finalize
//! ```

mod project;
mod simulate;
mod store;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use project::{init_project, AnnotationBatch, FinalizeSummary, Project, SubmitOutcome};
pub use simulate::{run_simulation, DESK_LEARNING_RATE, SimulationConfig, SimulationReport, SimulationRun};
pub use store::{export_archive, STATE_FILE};

use crate::checksum::stable_hash_str;
use crate::data::{LoopMode, ProjectConfig};
use crate::labels::LabelSet;
use crate::selection::Strategy;
use crate::sentence::{Sentence, TagSequence};

pub const STATE_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Idle,
    Selecting,
    AwaitingAnnotation,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MainStatus {
    NotStarted,
    /// Training on the labeled set whose id hash is `trained_on`, launched at `iteration`.
    Running { iteration: usize, trained_on: String },
    Done { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub sentence: Sentence,
    pub tags: TagSequence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub iteration: usize,
    /// Directory relative to the project root; absent for in-memory projects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub fingerprint: String,
    pub trained_on: String,
    pub labeled_count: usize,
}

/// Which main checkpoint produced the stored distillation signals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub iteration: usize,
    pub checkpoint_fingerprint: String,
    pub trained_on: String,
    pub sentence_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub strategy: Strategy,
    pub mode: LoopMode,
    pub selected_ids: Vec<String>,
    pub labeled_before: usize,
    pub proxy_train_seconds: f64,
    pub selection_seconds: f64,
    /// Main-model training launched (or, in the standard loop, run) at this iteration.
    pub main_train_seconds: Option<f64>,
    pub annotation_seconds: Option<f64>,
    /// Time the annotator waited for the batch.
    pub idle_seconds: f64,
    /// Whether background main training finished within the annotation time.
    pub overlap: Option<bool>,
    /// Fingerprint of the main checkpoint whose signals the proxy distilled.
    pub signal_source: Option<String>,
    pub distilled_sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub format_version: String,
    pub config: ProjectConfig,
    pub iteration: usize,
    pub phase: Phase,
    pub main_status: MainStatus,
    /// Hash of every sentence id ever ingested; constant once data is loaded.
    pub universe: Option<String>,
    pub batch_size: usize,
    pub labeled: BTreeMap<String, LabeledSentence>,
    pub unlabeled: BTreeMap<String, Sentence>,
    pub pending_batch: Vec<String>,
    /// Record of the iteration awaiting annotation.
    pub pending_record: Option<IterationRecord>,
    /// Unix time at which the pending batch was handed out.
    pub handed_out_at: Option<f64>,
    pub signal: Option<SignalRecord>,
    pub main_checkpoints: Vec<CheckpointRef>,
    pub proxy_checkpoint: Option<CheckpointRef>,
    pub records: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

impl ProjectState {
    pub fn new(config: ProjectConfig) -> Self {
        Self {
            format_version: STATE_VERSION.into(),
            config,
            iteration: 0,
            phase: Phase::Idle,
            main_status: MainStatus::NotStarted,
            universe: None,
            batch_size: 0,
            labeled: BTreeMap::new(),
            unlabeled: BTreeMap::new(),
            pending_batch: Vec::new(),
            pending_record: None,
            handed_out_at: None,
            signal: None,
            main_checkpoints: Vec::new(),
            proxy_checkpoint: None,
            records: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn labels(&self) -> &LabelSet {
        &self.config.labels
    }

    pub fn labeled_pairs(&self) -> Vec<(Sentence, TagSequence)> {
        self.labeled.values().map(|l| (l.sentence.clone(), l.tags.clone())).collect()
    }

    pub fn labeled_hash(&self) -> String {
        crate::model::train::training_set_hash(self.labeled.keys().map(String::as_str))
    }

    pub fn universe_hash(&self) -> String {
        crate::model::train::training_set_hash(self.labeled.keys().chain(self.unlabeled.keys()).map(String::as_str))
    }

    pub fn latest_main(&self) -> Option<&CheckpointRef> {
        self.main_checkpoints.last()
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if let Some(id) = self.labeled.keys().find(|id| self.unlabeled.contains_key(*id)) {
            return Err(format!("sentence {id} is both labeled and unlabeled"));
        }
        if let Some(universe) = &self.universe {
            if *universe != self.universe_hash() {
                return Err("labeled and unlabeled ids no longer add up to the ingested set".into());
            }
        }
        match self.phase {
            Phase::AwaitingAnnotation => {
                if self.pending_batch.is_empty() {
                    return Err("awaiting annotation without a pending batch".into());
                }
                if let Some(id) = self.pending_batch.iter().find(|id| !self.unlabeled.contains_key(*id)) {
                    return Err(format!("pending sentence {id} is not in the unlabeled pool"));
                }
            }
            _ if !self.pending_batch.is_empty() => return Err("pending batch outside annotation".into()),
            _ => {}
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in self.records.iter().flat_map(|r| &r.selected_ids) {
            if !seen.insert(id) {
                return Err(format!("sentence {id} was selected twice"));
            }
            if !self.labeled.contains_key(id) {
                return Err(format!("selected sentence {id} is not labeled"));
            }
        }
        Ok(())
    }
}

/// Progress of the background main-training job, shared with readers.
#[derive(Debug)]
pub struct TrainingProgress {
    pub iteration: usize,
    pub started_at: f64,
    fraction_bits: AtomicU64,
    finished_at_bits: AtomicU64,
    finished: AtomicBool,
    failed: AtomicBool,
}

impl TrainingProgress {
    pub(crate) fn new(iteration: usize) -> Self {
        Self {
            iteration,
            started_at: unix_now(),
            fraction_bits: AtomicU64::new(0f64.to_bits()),
            finished_at_bits: AtomicU64::new(0f64.to_bits()),
            finished: AtomicBool::new(false),
            failed: AtomicBool::new(false),
        }
    }

    pub fn fraction(&self) -> f64 {
        f64::from_bits(self.fraction_bits.load(Ordering::Acquire))
    }

    pub(crate) fn set_fraction(&self, fraction: f64) {
        self.fraction_bits.store(fraction.to_bits(), Ordering::Release);
    }

    pub(crate) fn finish(&self, ok: bool) {
        self.finished_at_bits.store(unix_now().to_bits(), Ordering::Release);
        self.failed.store(!ok, Ordering::Release);
        self.finished.store(true, Ordering::Release);
    }

    pub fn is_finished(&self) -> bool {
        self.finished.load(Ordering::Acquire)
    }

    pub fn failed(&self) -> bool {
        self.failed.load(Ordering::Acquire)
    }

    pub fn finished_at(&self) -> Option<f64> {
        self.is_finished().then(|| f64::from_bits(self.finished_at_bits.load(Ordering::Acquire)))
    }
}

pub(crate) fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Seed for one purpose at one iteration, derived from the project seed.
pub(crate) fn derive_seed(seed: u64, purpose: &str, iteration: usize) -> u64 {
    stable_hash_str(&[&seed.to_string(), purpose, &iteration.to_string()])
}
