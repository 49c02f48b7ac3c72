//! Project configuration as submitted when a project is created.

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldIssue, Result};
use crate::labels::LabelSet;
use crate::model::encoder::{MAIN, PROXY};
use crate::model::{AdapterConfig, EncoderBackend, LossConfig, TrainConfig, TransitionDistillation, UnaryActivation};
use crate::selection::{Strategy, StrategyConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub main_backend: String,
    pub proxy_backend: String,
    pub adapter: Option<AdapterConfig>,
    /// Forbid BIO-invalid transitions in the CRF.
    pub mask_bio: bool,
    pub unary: UnaryActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { main_backend: MAIN.into(), proxy_backend: PROXY.into(), adapter: None, mask_bio: true, unary: UnaryActivation::LogSoftmax }
    }
}

impl ModelConfig {
    pub fn main(&self) -> Result<EncoderBackend> {
        Ok(EncoderBackend::named(&self.main_backend)?.with_adapter(self.adapter))
    }

    pub fn proxy(&self) -> Result<EncoderBackend> {
        Ok(EncoderBackend::named(&self.proxy_backend)?.with_adapter(self.adapter))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub main_epochs: usize,
    pub proxy_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adapters_only: bool,
    pub distill_weight: f64,
    pub transition_mode: TransitionDistillation,
    /// Continue from the previous proxy instead of a fresh initialization.
    pub proxy_warm_start: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let main = TrainConfig::main_defaults();
        Self {
            main_epochs: main.epochs,
            proxy_epochs: TrainConfig::proxy_defaults().epochs,
            batch_size: main.batch_size,
            learning_rate: main.learning_rate,
            adapters_only: false,
            distill_weight: 1.0,
            transition_mode: TransitionDistillation::MainPath,
            proxy_warm_start: false,
        }
    }
}

impl TrainingConfig {
    fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            adapters_only: self.adapters_only,
            loss: LossConfig { distill_weight: self.distill_weight, transition_mode: self.transition_mode },
        }
    }

    pub fn main(&self, seed: u64) -> TrainConfig {
        self.train_config(self.main_epochs, seed)
    }

    pub fn proxy(&self, seed: u64) -> TrainConfig {
        self.train_config(self.proxy_epochs, seed)
    }
}

/// Where the model that drives selection comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    /// A small proxy is trained before each selection; the main model trains
    /// in the background while the batch is annotated.
    #[default]
    Proxy,
    /// The main model is trained before each selection and selects itself.
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub name: String,
    pub labels: LabelSet,
    /// Strategy settings; its `batch_size` is derived from the fields below.
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    /// Batch size as a fraction of the initial data (labeled plus unlabeled).
    #[serde(default)]
    pub batch_fraction: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Train the main model once more on all labeled data when finalizing.
    #[serde(default = "default_true")]
    pub retrain_on_full: bool,
    /// Warn when a batch is smaller than this; small batches cannot hide main training.
    #[serde(default)]
    pub min_batch_for_overlap: Option<usize>,
    /// Model-free strategy used while no labeled data exists. Without it a
    /// model-based strategy fails at a cold start.
    #[serde(default)]
    pub cold_start: Option<Strategy>,
    #[serde(default)]
    pub loop_mode: LoopMode,
}

fn default_true() -> bool {
    true
}

impl ProjectConfig {
    pub fn new(name: impl Into<String>, labels: LabelSet, strategy: StrategyConfig) -> Self {
        Self {
            name: name.into(),
            labels,
            strategy,
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            batch_fraction: Some(0.02),
            batch_size: None,
            language: None,
            seed: 0,
            retrain_on_full: true,
            min_batch_for_overlap: None,
            cold_start: None,
            loop_mode: LoopMode::Proxy,
        }
    }

    /// Every problem with the configuration, by field path.
    pub fn issues(&self) -> Vec<FieldIssue> {
        let mut issues = Vec::new();
        let mut issue = |field: &str, message: &str| {
            issues.push(FieldIssue { field: field.into(), message: message.into() });
        };
        if self.name.trim().is_empty() {
            issue("name", "must be non-empty");
        } else if !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            issue("name", "may only contain ASCII letters, digits, '-' and '_'");
        }
        if self.labels.types().is_empty() {
            issue("labels", "at least one label type is required");
        }
        match (self.batch_fraction, self.batch_size) {
            (Some(_), Some(_)) | (None, None) => issue("batch_fraction", "set exactly one of batch_fraction and batch_size"),
            (Some(f), None) if !(f > 0.0 && f <= 1.0) => issue("batch_fraction", "must lie in (0, 1]"),
            (None, Some(0)) => issue("batch_size", "must be positive"),
            _ => {}
        }
        let t = &self.training;
        if t.main_epochs == 0 {
            issue("training.main_epochs", "must be positive");
        }
        if t.proxy_epochs == 0 {
            issue("training.proxy_epochs", "must be positive");
        }
        if t.batch_size == 0 {
            issue("training.batch_size", "must be positive");
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            issue("training.learning_rate", "must be positive and finite");
        }
        if !(t.distill_weight >= 0.0 && t.distill_weight.is_finite()) {
            issue("training.distill_weight", "must be non-negative and finite");
        }
        if let Err(e) = self.model.main() {
            issue("model.main_backend", &e.to_string());
        }
        if let Err(e) = self.model.proxy() {
            issue("model.proxy_backend", &e.to_string());
        }
        if let Some(a) = self.model.adapter {
            if a.bottleneck_dim == 0 {
                issue("model.adapter.bottleneck_dim", "must be positive");
            }
        }
        if self.cold_start.is_some_and(|s| s.needs_model()) {
            issue("cold_start", "must be ALPS or RANDOM");
        }
        let probe = StrategyConfig { batch_size: 1, ..self.strategy.clone() };
        if let Err(e) = probe.validate() {
            issue("strategy", &e.to_string());
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }

    /// Number of sentences selected per iteration given the initial data size.
    pub fn batch_size_for(&self, initial_total: usize) -> usize {
        match (self.batch_size, self.batch_fraction) {
            (Some(n), _) => n,
            (None, Some(f)) => ((f * initial_total as f64).round() as usize).max(1),
            (None, None) => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ProjectConfig {
        ProjectConfig::new("demo", LabelSet::new(["PER"]).unwrap(), StrategyConfig::new(Strategy::Mnlp, 1, 0))
    }

    #[test]
    fn defaults_are_valid() {
        assert!(config().validate().is_ok());
        assert_eq!(config().training.main_epochs, 40);
        assert_eq!(config().training.proxy_epochs, 20);
    }

    #[test]
    fn two_percent_of_twelve_thousand_one_hundred() {
        assert_eq!(config().batch_size_for(12_100), 242);
    }

    #[test]
    fn exactly_one_batch_setting() {
        let mut c = config();
        c.batch_size = Some(10);
        let issues = c.issues();
        assert_eq!(issues[0].field, "batch_fraction");
        c.batch_fraction = None;
        assert!(c.issues().is_empty());
        assert_eq!(c.batch_size_for(1_000), 10);
    }

    #[test]
    fn reports_fields() {
        let mut c = config();
        c.training.learning_rate = 0.0;
        c.model.main_backend = "gpt-17".into();
        let fields: Vec<String> = c.issues().into_iter().map(|i| i.field).collect();
        assert_eq!(fields, ["training.learning_rate", "model.main_backend"]);
    }

    #[test]
    fn json_round_trip_and_unknown_strategy() {
        let c = config();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ProjectConfig>(&json).unwrap(), c);
        let bad = json.replace("\"MNLP\"", "\"ENTROPY\"");
        assert!(serde_json::from_str::<ProjectConfig>(&bad).is_err());
    }
}
