//! Simulated active learning: the annotator reveals gold tags and the main
//! model is scored on a held-out split after every iteration.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::project::{init_project, Project};
use super::IterationRecord;
use crate::data::{oracle_annotate, Corpus, LoopMode, ProjectConfig};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::selection::{Strategy, StrategyConfig};
use crate::sentence::{Sentence, TagSequence};

/// Learning rate at which the hash encoders fit the desk corpus within the
/// default epoch counts.
pub const DESK_LEARNING_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub strategy: Strategy,
    pub iterations: usize,
    pub batch_fraction: f64,
    pub seeds: Vec<u64>,
    /// Every `test_every`-th sentence of the corpus is held out for testing.
    pub test_every: usize,
    /// Simulated annotation speed.
    pub seconds_per_token: f64,
    pub loop_mode: LoopMode,
    /// Strategy for the first iteration when the configured one needs a model.
    pub cold_start: Strategy,
    /// Run the seeds concurrently. Timings are then measured under load.
    pub parallel_seeds: bool,
    /// Model and training settings; labels, strategy and batch settings are
    /// overwritten from the fields above and the corpus.
    pub project: Option<ProjectConfig>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Mnlp,
            iterations: 25,
            batch_fraction: 0.02,
            seeds: vec![0, 1, 2],
            test_every: 5,
            seconds_per_token: 2.0,
            loop_mode: LoopMode::Proxy,
            cold_start: Strategy::Random,
            parallel_seeds: false,
            project: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    /// Test F1 of the main model after iteration `t`, i.e. trained on the
    /// first `t + 1` batches.
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub strategy: Strategy,
    pub loop_mode: LoopMode,
    pub config: SimulationConfig,
    pub pool_size: usize,
    pub test_size: usize,
    pub batch_size: usize,
    pub runs: Vec<SimulationRun>,
}

impl SimulationReport {
    /// Fraction of the pool labeled after iteration `t`.
    pub fn labeled_fraction(&self, t: usize) -> f64 {
        ((t + 1) * self.batch_size) as f64 / self.pool_size as f64
    }

    /// Mean F1 over seeds after iteration `t`.
    pub fn f1_mean(&self, t: usize) -> f64 {
        self.runs.iter().map(|r| r.f1[t]).sum::<f64>() / self.runs.len() as f64
    }

    /// Mean F1 at the first iteration whose labeled fraction reaches `fraction`.
    pub fn f1_at_fraction(&self, fraction: f64) -> Option<f64> {
        (0..self.config.iterations).find(|&t| self.labeled_fraction(t) + 1e-9 >= fraction).map(|t| self.f1_mean(t))
    }

    /// Mean over seeds of one per-iteration quantity.
    pub fn timing_mean(&self, t: usize, field: impl Fn(&IterationRecord) -> f64) -> f64 {
        self.runs.iter().map(|r| field(&r.records[t])).sum::<f64>() / self.runs.len() as f64
    }

    /// Mean idle seconds per iteration over all iterations and seeds.
    pub fn mean_idle_seconds(&self) -> f64 {
        let n = self.runs.iter().map(|r| r.records.len()).sum::<usize>().max(1);
        self.runs.iter().flat_map(|r| &r.records).map(|r| r.idle_seconds).sum::<f64>() / n as f64
    }
}

/// Runs the loop once per seed with a simulated annotator.
pub fn run_simulation(gold: &Corpus, config: &SimulationConfig) -> Result<SimulationReport> {
    if gold.gold.is_none() {
        return Err(Error::Config("simulation needs a corpus with gold labels".into()));
    }
    if config.seeds.is_empty() || config.iterations == 0 {
        return Err(Error::Config("simulation needs at least one seed and one iteration".into()));
    }
    if config.cold_start.needs_model() {
        return Err(Error::Config("the cold-start strategy must be ALPS or RANDOM".into()));
    }
    let (pool, test) = gold.split_every(config.test_every);
    if test.is_empty() || pool.is_empty() {
        return Err(Error::Config("corpus too small for a pool/test split".into()));
    }
    let mut project_config = config.project.clone().unwrap_or_else(|| {
        ProjectConfig::new("simulation", gold.labels.clone(), StrategyConfig::new(config.strategy, 1, 0))
    });
    project_config.labels = gold.labels.clone();
    project_config.strategy.name = config.strategy;
    project_config.batch_fraction = Some(config.batch_fraction);
    project_config.batch_size = None;
    project_config.cold_start = Some(config.cold_start);
    project_config.loop_mode = config.loop_mode;
    project_config.retrain_on_full = true;
    project_config.validate()?;
    let batch_size = project_config.batch_size_for(pool.len());
    if config.iterations * batch_size > pool.len() {
        return Err(Error::Config(format!(
            "{} iterations of {batch_size} sentences exceed the pool of {}",
            config.iterations,
            pool.len()
        )));
    }
    let test_pairs = test.labeled_pairs();

    let run = |&seed: &u64| -> Result<SimulationRun> {
        let mut cfg = project_config.clone();
        cfg.seed = seed;
        run_one(&pool, &test_pairs, cfg, config, seed)
    };
    let runs: Vec<SimulationRun> = if config.parallel_seeds {
        config.seeds.par_iter().map(run).collect::<Result<_>>()?
    } else {
        config.seeds.iter().map(run).collect::<Result<_>>()?
    };
    Ok(SimulationReport {
        strategy: config.strategy,
        loop_mode: config.loop_mode,
        config: config.clone(),
        pool_size: pool.len(),
        test_size: test.len(),
        batch_size,
        runs,
    })
}

fn run_one(
    pool: &Corpus,
    test: &[(Sentence, TagSequence)],
    project_config: ProjectConfig,
    config: &SimulationConfig,
    seed: u64,
) -> Result<SimulationRun> {
    let mut project = init_project(None, project_config, pool.sentences.clone(), Vec::new())?;
    let mut f1 = Vec::with_capacity(config.iterations);
    for t in 0..config.iterations {
        let batch = project.start_iteration()?;
        let ids: Vec<&str> = batch.sentences.iter().map(|s| s.id.as_str()).collect();
        let annotations: BTreeMap<String, TagSequence> = oracle_annotate(pool, &ids)?;
        let tokens: usize = batch.sentences.iter().map(Sentence::len).sum();
        project.submit_annotations_timed(annotations, Some(tokens as f64 * config.seconds_per_token))?;
        if t > 0 {
            f1.push(score(&project, test)?);
        }
    }
    project.finalize()?;
    f1.push(score(&project, test)?);
    tracing::info!(strategy = %config.strategy, seed, final_f1 = f1.last().copied(), "simulation run finished");
    Ok(SimulationRun { seed, records: project.state().records.clone(), f1 })
}

/// Test F1 of the latest main model. After submitting batch `t` that model is
/// trained on batches `0..t`; after finalize it is trained on all of them.
fn score(project: &Project, test: &[(Sentence, TagSequence)]) -> Result<f64> {
    let model = project.main_model().ok_or_else(|| Error::State("no main model to evaluate".into()))?;
    Ok(evaluate(model, test)?.f1())
}
