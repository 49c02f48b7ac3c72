use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::store::{self, iteration_dir, write_json, CHECKPOINTS_DIR};
use super::{
    derive_seed, unix_now, CheckpointRef, IterationRecord, LabeledSentence, MainStatus, Phase, ProjectState,
    SignalRecord, TrainingProgress,
};
use crate::data::trained::{EXPORT_DIR, EXPORT_FORMAT_VERSION, LABELED_FILE, MODEL_DIR, REPORT_FILE};
use crate::data::{write_jsonl, Corpus, LoopMode, ProjectConfig};
use crate::error::{Error, Result, SentenceIssue};
use crate::labels::LabelSet;
use crate::model::train::{train_with_progress, training_set_hash};
use crate::model::{checkpoint, DistillationSignal, EncoderBackend, SequenceLabeler, TrainingReport};
use crate::selection::{self, SelectionResult, Strategy, ToyMlm};
use crate::sentence::{Sentence, TagSequence};

/// Main checkpoints kept on disk; older weights are deleted.
const KEEP_MAIN_CHECKPOINTS: usize = 2;
const PROXY_CHECKPOINT: &str = "proxy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBatch {
    pub iteration: usize,
    pub strategy: Strategy,
    pub sentences: Vec<Sentence>,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub accepted: usize,
    pub next_iteration: usize,
    /// Whether background main training had finished when the annotations
    /// arrived; absent when no main training was running.
    pub main_finished_before_submit: Option<bool>,
    pub signals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeSummary {
    pub export_dir: Option<PathBuf>,
    pub labeled_count: usize,
    pub main_fingerprint: String,
    pub retrained: bool,
}

struct MainJob {
    iteration: usize,
    trained_on: String,
    progress: Arc<TrainingProgress>,
    handle: JoinHandle<Result<(SequenceLabeler, TrainingReport)>>,
}

/// One annotation project: the single writer of its [`ProjectState`].
pub struct Project {
    root: Option<PathBuf>,
    state: ProjectState,
    main_model: Option<SequenceLabeler>,
    proxy_model: Option<SequenceLabeler>,
    signals: BTreeMap<String, DistillationSignal>,
    main_job: Option<MainJob>,
    mlm: Option<ToyMlm>,
}

impl std::fmt::Debug for Project {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Project")
            .field("root", &self.root)
            .field("iteration", &self.state.iteration)
            .field("phase", &self.state.phase)
            .finish_non_exhaustive()
    }
}

/// Creates a project and loads its data in one step.
pub fn init_project(
    root: Option<&Path>,
    config: ProjectConfig,
    pool: Vec<Sentence>,
    seed_labeled: Vec<(Sentence, TagSequence)>,
) -> Result<Project> {
    let mut project = Project::create(root, config)?;
    project.ingest(pool, seed_labeled)?;
    Ok(project)
}

impl Project {
    /// A new project without data. With a root directory the project is
    /// persisted there; the directory must not already hold a project.
    pub fn create(root: Option<&Path>, config: ProjectConfig) -> Result<Self> {
        config.validate()?;
        let project = Self {
            root: root.map(Path::to_path_buf),
            state: ProjectState::new(config),
            main_model: None,
            proxy_model: None,
            signals: BTreeMap::new(),
            main_job: None,
            mlm: None,
        };
        if let Some(root) = root {
            if root.join(store::STATE_FILE).exists() {
                return Err(Error::State(format!("{} already holds a project", root.display())));
            }
            fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
            project.persist()?;
        }
        Ok(project)
    }

    /// Reopens a persisted project. Work interrupted by a crash is resumed:
    /// a selection in progress is discarded and a running main training is
    /// restarted with the same data and seed.
    pub fn open(root: &Path) -> Result<Self> {
        let mut state = store::load_state(root)?;
        state.check_invariants().map_err(|m| Error::State(format!("persisted state is inconsistent: {m}")))?;
        if state.phase == Phase::Selecting {
            state.phase = Phase::Idle;
        }
        let mut project = Self {
            root: Some(root.to_path_buf()),
            state,
            main_model: None,
            proxy_model: None,
            signals: BTreeMap::new(),
            main_job: None,
            mlm: None,
        };
        if let Some(latest) = project.state.latest_main().cloned() {
            let path = latest.path.as_ref().ok_or_else(|| Error::State("latest main checkpoint has no path".into()))?;
            let model = checkpoint::load(&root.join(path))?;
            if model.fingerprint() != latest.fingerprint {
                return Err(Error::State(format!("main checkpoint {path} does not match its recorded fingerprint")));
            }
            project.main_model = Some(model);
        }
        if let Some(proxy) = &project.state.proxy_checkpoint {
            if let Some(path) = &proxy.path {
                project.proxy_model = Some(checkpoint::load(&root.join(path))?);
            }
        }
        if let Some(record) = &project.state.signal {
            let path = iteration_dir(root, record.iteration).join("signals.json");
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let signals: Vec<DistillationSignal> = serde_json::from_slice(&bytes)?;
            project.signals = signals.into_iter().map(|s| (s.sentence_id.clone(), s)).collect();
        }
        if let MainStatus::Running { iteration, trained_on } = project.state.main_status.clone() {
            project.launch_main(iteration, &trained_on)?;
        }
        project.persist()?;
        Ok(project)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn state(&self) -> &ProjectState {
        &self.state
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.state.config
    }

    /// Latest completed main model.
    pub fn main_model(&self) -> Option<&SequenceLabeler> {
        self.main_model.as_ref()
    }

    pub fn proxy_model(&self) -> Option<&SequenceLabeler> {
        self.proxy_model.as_ref()
    }

    /// Distillation signals for the most recently annotated batch.
    pub fn latest_signals(&self) -> &BTreeMap<String, DistillationSignal> {
        &self.signals
    }

    /// Progress of the background main training, if one is running or has
    /// finished without being collected yet.
    pub fn main_progress(&self) -> Option<Arc<TrainingProgress>> {
        self.main_job.as_ref().map(|j| Arc::clone(&j.progress))
    }

    pub fn pending_batch(&self) -> Option<AnnotationBatch> {
        if self.state.phase != Phase::AwaitingAnnotation {
            return None;
        }
        let record = self.state.pending_record.as_ref()?;
        Some(AnnotationBatch {
            iteration: self.state.iteration,
            strategy: record.strategy,
            sentences: self.state.pending_batch.iter().map(|id| self.state.unlabeled[id].clone()).collect(),
            labels: self.state.config.labels.clone(),
        })
    }

    /// Loads the unlabeled pool and an optional labeled seed set. Allowed once,
    /// before the first iteration.
    pub fn ingest(&mut self, pool: Vec<Sentence>, seed_labeled: Vec<(Sentence, TagSequence)>) -> Result<usize> {
        if self.state.universe.is_some() || self.state.iteration > 0 || self.state.phase != Phase::Idle {
            return Err(Error::State("data has already been uploaded to this project".into()));
        }
        if pool.is_empty() {
            return Err(Error::Request("the unlabeled pool is empty".into()));
        }
        let labels = self.state.config.labels.clone();
        let mut seen = BTreeSet::new();
        for s in pool.iter().chain(seed_labeled.iter().map(|(s, _)| s)) {
            s.validate()?;
            if !seen.insert(s.id.clone()) {
                return Err(Error::data(&s.id, "duplicate sentence id across the seed set and pool"));
            }
        }
        for (s, tags) in &seed_labeled {
            labels.validate(&s.id, tags.as_slice(), s.len())?;
        }
        let count = pool.len();
        self.state.unlabeled = pool.into_iter().map(|s| (s.id.clone(), s)).collect();
        self.state.labeled = seed_labeled
            .into_iter()
            .map(|(sentence, tags)| (sentence.id.clone(), LabeledSentence { sentence, tags }))
            .collect();
        self.state.universe = Some(self.state.universe_hash());
        let total = self.state.labeled.len() + self.state.unlabeled.len();
        self.state.batch_size = self.state.config.batch_size_for(total);
        if let Some(min) = self.state.config.min_batch_for_overlap {
            if self.state.batch_size < min {
                let warning = format!(
                    "batch size {} is below min_batch_for_overlap {min}; annotation may not hide main training",
                    self.state.batch_size
                );
                tracing::warn!("{warning}");
                self.state.warnings.push(warning);
            }
        }
        self.persist()?;
        Ok(count)
    }

    /// The strategy to run now: the configured one, or the cold-start
    /// strategy while nothing is labeled.
    fn effective_strategy(&self) -> Result<Strategy> {
        let configured = self.state.config.strategy.name;
        if !self.state.labeled.is_empty() || !configured.needs_model() {
            return Ok(configured);
        }
        match self.state.config.cold_start {
            Some(s) if !s.needs_model() => Ok(s),
            _ => Err(Error::Config(format!(
                "{configured} needs a trained model but no labeled data exists yet; \
                 use ALPS or RANDOM for the first iteration (set cold_start) or provide a seed set"
            ))),
        }
    }

    /// Checks that an iteration can start now and returns the strategy it
    /// would run.
    pub fn check_can_start(&self) -> Result<Strategy> {
        match self.state.phase {
            Phase::Idle => {}
            other => return Err(Error::State(format!("cannot start an iteration while {other:?}"))),
        }
        if self.state.universe.is_none() {
            return Err(Error::State("no data has been uploaded yet".into()));
        }
        if self.state.unlabeled.is_empty() {
            return Err(Error::State("the unlabeled pool is exhausted".into()));
        }
        self.effective_strategy()
    }

    /// Checks that [`Project::finalize`] would do work (or is a repeat).
    pub fn check_can_finalize(&self) -> Result<()> {
        match self.state.phase {
            Phase::Finalized => Ok(()),
            Phase::Idle if self.state.latest_main().is_none() => {
                Err(Error::State("the main model was never trained; run at least two iterations".into()))
            }
            Phase::Idle => Ok(()),
            other => Err(Error::State(format!("cannot finalize while {other:?}"))),
        }
    }

    /// Trains the proxy (or, in the standard loop, the main model), selects
    /// the next batch and launches main-model training in the background.
    pub fn start_iteration(&mut self) -> Result<AnnotationBatch> {
        let strategy = self.check_can_start()?;
        self.state.phase = Phase::Selecting;
        self.persist()?;
        match self.select_batch(strategy) {
            Ok(batch) => Ok(batch),
            Err(e) => {
                self.state.phase = Phase::Idle;
                self.persist()?;
                Err(e)
            }
        }
    }

    fn select_batch(&mut self, strategy: Strategy) -> Result<AnnotationBatch> {
        let t = self.state.iteration;
        let config = self.state.config.clone();
        let labeled = self.state.labeled_pairs();
        let mut record = IterationRecord {
            t,
            strategy,
            mode: config.loop_mode,
            selected_ids: Vec::new(),
            labeled_before: labeled.len(),
            proxy_train_seconds: 0.0,
            selection_seconds: 0.0,
            main_train_seconds: None,
            annotation_seconds: None,
            idle_seconds: 0.0,
            overlap: None,
            signal_source: None,
            distilled_sentences: 0,
        };

        let selector = match config.loop_mode {
            LoopMode::Proxy if strategy.needs_model() => {
                let init = match (&self.proxy_model, config.training.proxy_warm_start) {
                    (Some(previous), true) => previous.clone(),
                    _ => self.fresh_model(config.model.proxy()?),
                };
                let usable: BTreeMap<String, DistillationSignal> = self
                    .signals
                    .iter()
                    .filter(|(id, _)| self.state.labeled.contains_key(*id))
                    .map(|(id, s)| (id.clone(), s.clone()))
                    .collect();
                let started = Instant::now();
                let (proxy, _) = train_with_progress(
                    &init,
                    &labeled,
                    (!usable.is_empty()).then_some(&usable),
                    &config.training.proxy(derive_seed(config.seed, "proxy", t)),
                    &mut |_| {},
                )?;
                record.proxy_train_seconds = started.elapsed().as_secs_f64();
                record.distilled_sentences = usable.len();
                if !usable.is_empty() {
                    record.signal_source = self.state.signal.as_ref().map(|s| s.checkpoint_fingerprint.clone());
                }
                self.state.proxy_checkpoint = Some(self.save_checkpoint(&proxy, PROXY_CHECKPOINT, t)?);
                self.proxy_model = Some(proxy);
                self.proxy_model.as_ref()
            }
            LoopMode::Proxy => None,
            LoopMode::Standard => {
                if !labeled.is_empty() {
                    let init = self.fresh_model(config.model.main()?);
                    let (main, report) = train_with_progress(
                        &init,
                        &labeled,
                        None,
                        &config.training.main(derive_seed(config.seed, "main", t)),
                        &mut |_| {},
                    )?;
                    record.main_train_seconds = Some(report.wall_seconds);
                    let trained_on = self.state.labeled_hash();
                    self.adopt_main(main, t, &trained_on)?;
                }
                if strategy.needs_model() {
                    self.main_model.as_ref()
                } else {
                    None
                }
            }
        };

        let pool: Vec<Sentence> = self.state.unlabeled.values().cloned().collect();
        let mut strategy_config = config.strategy.clone();
        strategy_config.name = strategy;
        strategy_config.batch_size = self.state.batch_size.min(pool.len());
        strategy_config.seed = derive_seed(config.seed ^ config.strategy.seed, "select", t);
        if strategy == Strategy::Alps && self.mlm.is_none() {
            let mut all: Vec<&Sentence> =
                self.state.labeled.values().map(|l| &l.sentence).chain(self.state.unlabeled.values()).collect();
            all.sort_by(|a, b| a.id.cmp(&b.id));
            self.mlm = Some(ToyMlm::fit(all));
        }
        let fallback_mlm = ToyMlm::default();
        let mlm = self.mlm.as_ref().unwrap_or(&fallback_mlm);
        let started = Instant::now();
        let result: SelectionResult = selection::select(&strategy_config, selector, mlm, &pool)?;
        record.selection_seconds = started.elapsed().as_secs_f64();
        record.idle_seconds = record.proxy_train_seconds + record.selection_seconds;
        if config.loop_mode == LoopMode::Standard {
            record.idle_seconds += record.main_train_seconds.unwrap_or(0.0);
        }
        record.selected_ids = result.selected_ids.clone();
        if let Some(root) = &self.root {
            write_json(&iteration_dir(root, t).join("selection.json"), &result)?;
        }

        if config.loop_mode == LoopMode::Proxy && !labeled.is_empty() {
            let trained_on = self.state.labeled_hash();
            self.launch_main(t, &trained_on)?;
            self.state.main_status = MainStatus::Running { iteration: t, trained_on };
        }

        self.state.pending_batch = result.selected_ids;
        self.state.pending_record = Some(record);
        self.state.handed_out_at = Some(unix_now());
        self.state.phase = Phase::AwaitingAnnotation;
        self.persist()?;
        Ok(self.pending_batch().expect("batch was just stored"))
    }

    fn fresh_model(&self, backend: EncoderBackend) -> SequenceLabeler {
        let c = &self.state.config;
        SequenceLabeler::new(backend, c.labels.clone(), c.seed, c.model.mask_bio).with_unary(c.model.unary)
    }

    /// Starts main-model training on the current labeled set in a background thread.
    fn launch_main(&mut self, iteration: usize, trained_on: &str) -> Result<()> {
        if self.state.labeled_hash() != trained_on {
            return Err(Error::State("main training must run on the labeled set it was launched for".into()));
        }
        let config = &self.state.config;
        let init = self.fresh_model(config.model.main()?);
        let data = self.state.labeled_pairs();
        let train_config = config.training.main(derive_seed(config.seed, "main", iteration));
        let progress = Arc::new(TrainingProgress::new(iteration));
        let shared = Arc::clone(&progress);
        let handle = std::thread::Builder::new()
            .name(format!("main-training-{iteration}"))
            .spawn(move || {
                let result = train_with_progress(&init, &data, None, &train_config, &mut |f| shared.set_fraction(f));
                shared.finish(result.is_ok());
                result
            })
            .map_err(|e| Error::Job(format!("could not start main training: {e}")))?;
        self.main_job = Some(MainJob { iteration, trained_on: trained_on.to_string(), progress, handle });
        Ok(())
    }

    /// Checks an annotation submission without applying it.
    pub fn validate_annotations(&self, annotations: &BTreeMap<String, TagSequence>) -> Result<()> {
        if self.state.phase != Phase::AwaitingAnnotation {
            return Err(Error::State(format!("no batch is awaiting annotation (phase {:?})", self.state.phase)));
        }
        let pending: BTreeSet<&String> = self.state.pending_batch.iter().collect();
        let given: BTreeSet<&String> = annotations.keys().collect();
        if pending != given {
            return Err(Error::BatchMismatch {
                missing: pending.difference(&given).map(|s| s.to_string()).collect(),
                extra: given.difference(&pending).map(|s| s.to_string()).collect(),
            });
        }
        let issues: Vec<SentenceIssue> = annotations
            .iter()
            .filter_map(|(id, tags)| {
                let len = self.state.unlabeled[id].len();
                self.state.config.labels.validate(id, tags.as_slice(), len).err().map(|e| SentenceIssue {
                    sentence_id: id.clone(),
                    message: match e {
                        Error::Data { message, .. } => message,
                        other => other.to_string(),
                    },
                })
            })
            .collect();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }

    pub fn submit_annotations(&mut self, annotations: BTreeMap<String, TagSequence>) -> Result<SubmitOutcome> {
        self.submit_annotations_timed(annotations, None)
    }

    /// Applies a complete, valid annotation of the pending batch. Waits for
    /// background main training, then computes signals for the batch.
    /// `annotation_seconds` overrides the measured annotation time (used by
    /// simulations).
    pub fn submit_annotations_timed(
        &mut self,
        annotations: BTreeMap<String, TagSequence>,
        annotation_seconds: Option<f64>,
    ) -> Result<SubmitOutcome> {
        self.validate_annotations(&annotations)?;
        let t = self.state.iteration;
        let annotation_seconds =
            annotation_seconds.unwrap_or_else(|| unix_now() - self.state.handed_out_at.unwrap_or_else(unix_now));
        let mut record = self.state.pending_record.clone().expect("awaiting annotation implies a pending record");
        record.annotation_seconds = Some(annotation_seconds);

        let batch: Vec<Sentence> =
            self.state.pending_batch.iter().map(|id| self.state.unlabeled[id].clone()).collect();
        let mut finished_before = None;
        let mut signals = BTreeMap::new();
        if let MainStatus::Running { iteration, trained_on } = self.state.main_status.clone() {
            if self.main_job.as_ref().is_none_or(|j| j.iteration != iteration) {
                self.launch_main(iteration, &trained_on)?;
            }
            let job = self.main_job.take().expect("main job was just ensured");
            finished_before = Some(job.progress.is_finished());
            let (main, report) =
                job.handle.join().map_err(|_| Error::Job("main training panicked".into()))??;
            if main.meta.trained_on.as_deref() != Some(job.trained_on.as_str())
                || job.trained_on != self.state.labeled_hash()
            {
                return Err(Error::State(
                    "signal freshness check failed: the main model was not trained on the current labeled set".into(),
                ));
            }
            record.main_train_seconds = Some(report.wall_seconds);
            record.overlap = Some(report.wall_seconds <= annotation_seconds);
            let fingerprint = main.fingerprint();
            let computed = main.compute_signal(&batch)?;
            if let Some(root) = &self.root {
                write_json(&iteration_dir(root, t).join("signals.json"), &computed)?;
            }
            self.state.signal = Some(SignalRecord {
                iteration: t,
                checkpoint_fingerprint: fingerprint,
                trained_on: job.trained_on.clone(),
                sentence_ids: computed.iter().map(|s| s.sentence_id.clone()).collect(),
            });
            signals = computed.into_iter().map(|s| (s.sentence_id.clone(), s)).collect();
            self.adopt_main(main, iteration, &job.trained_on)?;
        } else if self.state.config.loop_mode == LoopMode::Proxy {
            self.state.signal = None;
        }
        self.signals = signals;

        let accepted = annotations.len();
        for (id, tags) in annotations {
            let sentence = self.state.unlabeled.remove(&id).expect("validated against the pending batch");
            self.state.labeled.insert(id, LabeledSentence { sentence, tags });
        }
        if let Some(root) = &self.root {
            write_json(&iteration_dir(root, t).join("record.json"), &record)?;
        }
        self.state.records.push(record);
        self.state.pending_batch.clear();
        self.state.pending_record = None;
        self.state.handed_out_at = None;
        self.state.iteration += 1;
        self.state.phase = Phase::Idle;
        self.persist()?;
        Ok(SubmitOutcome {
            accepted,
            next_iteration: self.state.iteration,
            main_finished_before_submit: finished_before,
            signals: self.signals.len(),
        })
    }

    /// Records a completed main model as the latest checkpoint.
    fn adopt_main(&mut self, main: SequenceLabeler, iteration: usize, trained_on: &str) -> Result<()> {
        let mut reference = self.save_checkpoint(&main, &format!("main-{iteration}"), iteration)?;
        reference.trained_on = trained_on.to_string();
        self.state.main_checkpoints.retain(|c| c.iteration != iteration);
        self.state.main_checkpoints.push(reference);
        let keep_from = self.state.main_checkpoints.len().saturating_sub(KEEP_MAIN_CHECKPOINTS);
        for old in &mut self.state.main_checkpoints[..keep_from] {
            if let (Some(root), Some(path)) = (&self.root, old.path.take()) {
                let dir = root.join(&path);
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
            }
        }
        self.state.main_status = MainStatus::Done { iteration };
        self.main_model = Some(main);
        Ok(())
    }

    fn save_checkpoint(&self, model: &SequenceLabeler, name: &str, iteration: usize) -> Result<CheckpointRef> {
        let path = match &self.root {
            Some(root) => {
                let rel = format!("{CHECKPOINTS_DIR}/{name}");
                checkpoint::save(model, &root.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        Ok(CheckpointRef {
            iteration,
            path,
            fingerprint: model.fingerprint(),
            trained_on: model.meta.trained_on.clone().unwrap_or_default(),
            labeled_count: self.state.labeled.len(),
        })
    }

    /// Ends the project: optionally retrains the main model on all labeled
    /// data and writes the export. Calling it again returns the same summary.
    pub fn finalize(&mut self) -> Result<FinalizeSummary> {
        let export_dir = self.root.as_ref().map(|r| r.join(EXPORT_DIR));
        if self.state.phase == Phase::Finalized {
            let latest = self.state.latest_main().expect("finalized projects have a main model");
            return Ok(FinalizeSummary {
                export_dir,
                labeled_count: self.state.labeled.len(),
                main_fingerprint: latest.fingerprint.clone(),
                retrained: false,
            });
        }
        self.check_can_finalize()?;
        let latest = self.state.latest_main().cloned().expect("checked above");
        let labeled_hash = self.state.labeled_hash();
        let mut retrained = false;
        if self.state.config.retrain_on_full && latest.trained_on != labeled_hash {
            let config = self.state.config.clone();
            let init = self.fresh_model(config.model.main()?);
            let t = self.state.iteration;
            let (main, _) = train_with_progress(
                &init,
                &self.state.labeled_pairs(),
                None,
                &config.training.main(derive_seed(config.seed, "main", t)),
                &mut |_| {},
            )?;
            self.adopt_main(main, t, &labeled_hash)?;
            retrained = true;
        }
        let main = self.main_model.as_ref().expect("a main checkpoint is loaded");
        if let Some(dir) = &export_dir {
            self.write_export(dir, main)?;
        }
        let summary = FinalizeSummary {
            export_dir,
            labeled_count: self.state.labeled.len(),
            main_fingerprint: main.fingerprint(),
            retrained,
        };
        self.state.phase = Phase::Finalized;
        self.persist()?;
        Ok(summary)
    }

    fn write_export(&self, dir: &Path, main: &SequenceLabeler) -> Result<()> {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        checkpoint::save(main, &dir.join(MODEL_DIR))?;
        let corpus = Corpus {
            sentences: self.state.labeled.values().map(|l| l.sentence.clone()).collect(),
            gold: Some(self.state.labeled.iter().map(|(id, l)| (id.clone(), l.tags.clone())).collect()),
            labels: self.state.config.labels.clone(),
            provenance: None,
        };
        store::write_atomic(&dir.join(LABELED_FILE), write_jsonl(&corpus)?.as_bytes())?;
        let report = serde_json::json!({
            "format_version": EXPORT_FORMAT_VERSION,
            "phase": Phase::Finalized,
            "project": self.state.config.name,
            "language": self.state.config.language,
            "labels": self.state.config.labels,
            "iterations": self.state.iteration,
            "labeled_count": self.state.labeled.len(),
            "unlabeled_count": self.state.unlabeled.len(),
            "main_fingerprint": main.fingerprint(),
            "trained_on": main.meta.trained_on,
            "labeled_sha256": training_set_hash(self.state.labeled.keys().map(String::as_str)),
            "records": self.state.records,
        });
        write_json(&dir.join(REPORT_FILE), &report)
    }

    fn persist(&self) -> Result<()> {
        debug_assert!(self.state.check_invariants().is_ok(), "{:?}", self.state.check_invariants());
        match &self.root {
            Some(root) => store::save_state(root, &self.state),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::config::LoopMode;
    use crate::model::EncoderBackend;
    use crate::selection::StrategyConfig;

    fn labels() -> LabelSet {
        LabelSet::new(["PER"]).unwrap()
    }

    fn pool(n: usize) -> Vec<(Sentence, TagSequence)> {
        (0..n)
            .map(|i| {
                let name = format!("Name{}", i % 7);
                let s = Sentence::new(format!("s{i:03}"), [name.as_str(), "spoke", "today"]).unwrap();
                (s, TagSequence(vec![1, 0, 0]))
            })
            .collect()
    }

    fn config(strategy: Strategy, batch: usize) -> ProjectConfig {
        let mut c = ProjectConfig::new("unit", labels(), StrategyConfig::new(strategy, 1, 0));
        c.batch_fraction = None;
        c.batch_size = Some(batch);
        c.model.main_backend = "small-trainable".into();
        c.model.proxy_backend = "small-trainable".into();
        c.training.main_epochs = 2;
        c.training.proxy_epochs = 1;
        c.training.learning_rate = 0.01;
        c
    }

    fn oracle(batch: &AnnotationBatch) -> BTreeMap<String, TagSequence> {
        batch.sentences.iter().map(|s| (s.id.clone(), TagSequence(vec![1, 0, 0]))).collect()
    }

    #[test]
    fn seed_and_pool_must_not_share_ids() {
        let data = pool(3);
        let sentences: Vec<Sentence> = data.iter().map(|(s, _)| s.clone()).collect();
        let err = init_project(None, config(Strategy::Random, 1), sentences, vec![data[0].clone()]).unwrap_err();
        assert!(matches!(err, Error::Data { .. }));
    }

    #[test]
    fn seed_of_five_is_labeled() {
        let data = pool(20);
        let (seed, rest) = data.split_at(5);
        let p = init_project(None, config(Strategy::Random, 2), rest.iter().map(|(s, _)| s.clone()).collect(), seed.to_vec())
            .unwrap();
        assert_eq!(p.state().labeled.len(), 5);
        assert_eq!(p.state().unlabeled.len(), 15);
        assert!(p.state().check_invariants().is_ok());
    }

    #[test]
    fn cold_start_with_model_strategy_fails_and_stays_idle() {
        let sentences: Vec<Sentence> = pool(10).into_iter().map(|(s, _)| s).collect();
        let mut p = init_project(None, config(Strategy::Mnlp, 2), sentences, vec![]).unwrap();
        let err = p.start_iteration().unwrap_err();
        assert!(matches!(err, Error::Config(_)) && err.to_string().contains("ALPS or RANDOM"));
        assert_eq!(p.state().phase, Phase::Idle);
    }

    #[test]
    fn random_cold_start_trains_nothing() {
        let sentences: Vec<Sentence> = pool(10).into_iter().map(|(s, _)| s).collect();
        let mut p = init_project(None, config(Strategy::Random, 3), sentences, vec![]).unwrap();
        let batch = p.start_iteration().unwrap();
        assert_eq!(batch.sentences.len(), 3);
        assert!(p.main_progress().is_none());
        assert_eq!(p.state().main_status, MainStatus::NotStarted);
        assert_eq!(p.state().pending_record.as_ref().unwrap().proxy_train_seconds, 0.0);
    }

    #[test]
    fn partial_submission_is_rejected_atomically() {
        let sentences: Vec<Sentence> = pool(10).into_iter().map(|(s, _)| s).collect();
        let mut p = init_project(None, config(Strategy::Random, 3), sentences, vec![]).unwrap();
        let batch = p.start_iteration().unwrap();
        let mut ann = oracle(&batch);
        let dropped = ann.keys().next().unwrap().clone();
        ann.remove(&dropped);
        ann.insert("nope".into(), TagSequence(vec![0, 0, 0]));
        let before = p.state().clone();
        match p.submit_annotations(ann).unwrap_err() {
            Error::BatchMismatch { missing, extra } => {
                assert_eq!(missing, [dropped]);
                assert_eq!(extra, ["nope"]);
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(p.state(), &before);
    }

    #[test]
    fn invalid_bio_is_reported_per_sentence() {
        let sentences: Vec<Sentence> = pool(10).into_iter().map(|(s, _)| s).collect();
        let mut p = init_project(None, config(Strategy::Random, 2), sentences, vec![]).unwrap();
        let batch = p.start_iteration().unwrap();
        let mut ann = oracle(&batch);
        let bad = batch.sentences[1].id.clone();
        ann.insert(bad.clone(), TagSequence(vec![2, 0, 0]));
        match p.submit_annotations(ann).unwrap_err() {
            Error::Validation(issues) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].sentence_id, bad);
                assert!(issues[0].message.contains("I-PER"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn loop_moves_batches_and_distills_from_the_second_proxy_on() {
        let sentences: Vec<Sentence> = pool(30).into_iter().map(|(s, _)| s).collect();
        let mut c = config(Strategy::Mnlp, 3);
        c.cold_start = Some(Strategy::Random);
        let mut p = init_project(None, c, sentences, vec![]).unwrap();
        for t in 0..4 {
            let batch = p.start_iteration().unwrap();
            assert!(p.start_iteration().is_err(), "second start while awaiting annotation");
            let ids: BTreeSet<String> = batch.sentences.iter().map(|s| s.id.clone()).collect();
            let outcome = p.submit_annotations(oracle(&batch)).unwrap();
            assert_eq!(outcome.next_iteration, t + 1);
            assert_eq!(p.state().labeled.len(), 3 * (t + 1));
            assert_eq!(p.state().unlabeled.len(), 30 - 3 * (t + 1));
            let record = p.state().records.last().unwrap();
            match t {
                0 => {
                    assert_eq!(record.strategy, Strategy::Random);
                    assert!(p.latest_signals().is_empty());
                }
                _ => {
                    assert_eq!(record.strategy, Strategy::Mnlp);
                    let keys: BTreeSet<String> = p.latest_signals().keys().cloned().collect();
                    assert_eq!(keys, ids);
                    assert_eq!(p.state().main_status, MainStatus::Done { iteration: t });
                }
            }
            assert_eq!(record.distilled_sentences > 0, t >= 2, "iteration {t}");
            assert!(p.state().check_invariants().is_ok());
        }
    }

    #[test]
    fn finalize_requires_a_main_model_and_is_idempotent() {
        let sentences: Vec<Sentence> = pool(12).into_iter().map(|(s, _)| s).collect();
        let mut p = init_project(None, config(Strategy::Random, 2), sentences, vec![]).unwrap();
        let batch = p.start_iteration().unwrap();
        p.submit_annotations(oracle(&batch)).unwrap();
        assert!(matches!(p.finalize(), Err(Error::State(_))));
        let batch = p.start_iteration().unwrap();
        assert!(matches!(p.finalize(), Err(Error::State(_))), "awaiting annotation");
        p.submit_annotations(oracle(&batch)).unwrap();
        let first = p.finalize().unwrap();
        assert!(first.retrained);
        assert_eq!(first.labeled_count, 4);
        let second = p.finalize().unwrap();
        assert_eq!(second.main_fingerprint, first.main_fingerprint);
        assert!(p.start_iteration().is_err());
    }

    #[test]
    fn standard_loop_trains_main_before_selecting() {
        let data = pool(12);
        let (seed, rest) = data.split_at(2);
        let mut c = config(Strategy::Mnlp, 2);
        c.loop_mode = LoopMode::Standard;
        let mut p = init_project(None, c, rest.iter().map(|(s, _)| s.clone()).collect(), seed.to_vec()).unwrap();
        let batch = p.start_iteration().unwrap();
        let record = p.state().pending_record.clone().unwrap();
        assert!(record.main_train_seconds.is_some());
        assert!(record.idle_seconds >= record.main_train_seconds.unwrap());
        assert!(p.main_progress().is_none());
        p.submit_annotations(oracle(&batch)).unwrap();
        assert!(p.latest_signals().is_empty());
        assert_eq!(p.main_model().unwrap().backend, EncoderBackend::named("small-trainable").unwrap());
    }
}
