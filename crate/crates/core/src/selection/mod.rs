//! Acquisition strategies: pick the next annotation batch from the unlabeled pool.
//!
//! Every strategy is a pure function of (checkpoint, pool, config): the same
//! inputs and seed give the same ids in the same order. Per-sentence work
//! (scores, embeddings) is computed in parallel and merged back in pool order
//! before any sorting or clustering, so the result does not depend on thread
//! scheduling.

pub mod alps;
pub mod badge;
pub mod cluster;
pub mod kmeans;
pub mod mnlp;
pub mod random;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use alps::{surprisal_embedding, surprisal_vector, MlmBackend, ToyMlm};
pub use cluster::nearest_unclaimed;
pub use badge::{badge_embedding, BadgePooling};
pub use kmeans::{kmeans_cluster, KMeansResult};
pub use mnlp::mnlp_score;

use crate::error::{Error, Result};
use crate::model::SequenceLabeler;
use crate::sentence::Sentence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "MNLP")]
    Mnlp,
    #[serde(rename = "BERT-KM")]
    BertKm,
    #[serde(rename = "BADGE")]
    Badge,
    #[serde(rename = "ALPS")]
    Alps,
    #[serde(rename = "RANDOM")]
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Mnlp, Strategy::BertKm, Strategy::Badge, Strategy::Alps, Strategy::Random];

    /// Whether the strategy reads a trained task model.
    pub fn needs_model(self) -> bool {
        matches!(self, Strategy::Mnlp | Strategy::BertKm | Strategy::Badge)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Mnlp => "MNLP",
            Strategy::BertKm => "BERT-KM",
            Strategy::Badge => "BADGE",
            Strategy::Alps => "ALPS",
            Strategy::Random => "RANDOM",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected MNLP, BERT-KM, BADGE, ALPS or RANDOM)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iters: 100, restarts: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub name: Strategy,
    pub batch_size: usize,
    pub seed: u64,
    pub alps_mask_fraction: f64,
    /// Length of the surprisal vector; longer sentences are truncated.
    pub alps_max_len: usize,
    pub kmeans: KMeansConfig,
    pub badge_pooling: BadgePooling,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            name: Strategy::Mnlp,
            batch_size: 1,
            seed: 0,
            alps_mask_fraction: 0.15,
            alps_max_len: 64,
            kmeans: KMeansConfig::default(),
            badge_pooling: BadgePooling::Mean,
        }
    }
}

impl StrategyConfig {
    pub fn new(name: Strategy, batch_size: usize, seed: u64) -> Self {
        Self { name, batch_size, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.alps_mask_fraction > 0.0 && self.alps_mask_fraction <= 1.0) {
            return Err(Error::Config("alps_mask_fraction must lie in (0, 1]".into()));
        }
        if self.alps_max_len == 0 || self.kmeans.max_iters == 0 || self.kmeans.restarts == 0 {
            return Err(Error::Config("alps_max_len, kmeans.max_iters and kmeans.restarts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub wall_time_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub selected_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    pub diagnostics: Diagnostics,
}

impl SelectionResult {
    /// JSON of the ids and scores only (diagnostics carry wall-clock time).
    pub fn canonical_json(&self) -> String {
        serde_json::json!({ "strategy": self.strategy, "selected_ids": self.selected_ids, "scores": self.scores })
            .to_string()
    }
}

pub(crate) fn check_request(pool: &[Sentence], n: usize) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::Request("the unlabeled pool is empty".into()));
    }
    if n == 0 {
        return Err(Error::Request("batch size must be positive".into()));
    }
    if n > pool.len() {
        return Err(Error::Request(format!("batch size {n} exceeds the pool size {}", pool.len())));
    }
    Ok(())
}

/// Runs the configured strategy. `model` is required by MNLP, BERT-KM and
/// BADGE; ALPS and RANDOM never read it.
pub fn select(
    config: &StrategyConfig,
    model: Option<&SequenceLabeler>,
    mlm: &dyn MlmBackend,
    pool: &[Sentence],
) -> Result<SelectionResult> {
    config.validate()?;
    let started = Instant::now();
    let need_model = || {
        model.ok_or_else(|| {
            Error::Config(format!(
                "{} needs a trained model; use ALPS or RANDOM when no labeled data exists yet",
                config.name
            ))
        })
    };
    let mut result = match config.name {
        Strategy::Mnlp => mnlp::select_mnlp(need_model()?, pool, config)?,
        Strategy::BertKm => cluster::select_bertkm(need_model()?, pool, config)?,
        Strategy::Badge => badge::select_badge(need_model()?, pool, config)?,
        Strategy::Alps => alps::select_alps(mlm, pool, config)?,
        Strategy::Random => random::select_random(pool, config)?,
    };
    result.diagnostics.wall_time_seconds = started.elapsed().as_secs_f64();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.as_str()));
        }
        assert!("bert-km".parse::<Strategy>().is_ok());
        assert!("UNCERTAINTY".parse::<Strategy>().is_err());
    }

    #[test]
    fn model_strategies_refuse_cold_start() {
        let pool = vec![Sentence::new("a", ["x"]).unwrap()];
        let cfg = StrategyConfig::new(Strategy::Mnlp, 1, 0);
        let err = select(&cfg, None, &ToyMlm::default(), &pool).unwrap_err();
        assert!(err.to_string().contains("ALPS or RANDOM"));
    }
}
