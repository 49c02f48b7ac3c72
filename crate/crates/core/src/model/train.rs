use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::distill::{DistillationSignal, LossConfig};
use super::encoder::{Encoder, ParamGroup};
use super::labeler::{LabelerGrads, SequenceLabeler};
use crate::checksum::sha256_hex;
use crate::error::{Error, Result};
use crate::sentence::{Sentence, TagSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Train adapters, head and transitions only; base encoder weights stay frozen.
    pub adapters_only: bool,
    #[serde(default)]
    pub loss: LossConfig,
}

impl TrainConfig {
    /// Main-model schedule: Adam, 40 epochs, batch 16, lr 1e-5.
    pub fn main_defaults() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            learning_rate: 1e-5,
            seed: 0,
            adapters_only: false,
            loss: LossConfig::default(),
        }
    }

    /// Proxy-model schedule: as the main model but 20 epochs.
    pub fn proxy_defaults() -> Self {
        Self { epochs: 20, ..Self::main_defaults() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean per-sentence loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub wall_seconds: f64,
    pub steps: usize,
}

/// Adam with bias correction. Embedding rows are updated lazily: only rows
/// that received a gradient in a step move.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    dense: Vec<(Vec<f64>, Vec<f64>)>,
    embed: Option<(Array2<f64>, Array2<f64>)>,
}

impl Adam {
    fn new(labeler: &mut SequenceLabeler, lr: f64) -> Self {
        let dense = labeler
            .dense_params_mut()
            .iter()
            .map(|(_, p)| (vec![0.0; p.len()], vec![0.0; p.len()]))
            .collect();
        let embed = match &labeler.encoder {
            Encoder::Trainable(t) => Some((Array2::zeros(t.embeddings.dim()), Array2::zeros(t.embeddings.dim()))),
            Encoder::Toy(_) => None,
        };
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, dense, embed }
    }

    fn update(&mut self, labeler: &mut SequenceLabeler, grads: &LabelerGrads, adapters_only: bool) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let adam = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };

        let grad_slices = grads.dense_params();
        for (((group, params), (_, g)), (m, v)) in
            labeler.dense_params_mut().into_iter().zip(grad_slices).zip(self.dense.iter_mut())
        {
            if adapters_only && group == ParamGroup::Base {
                continue;
            }
            for i in 0..params.len() {
                adam(&mut params[i], g[i], &mut m[i], &mut v[i]);
            }
        }
        if adapters_only {
            return;
        }
        if let (Encoder::Trainable(enc), Some(eg), Some((m, v))) =
            (&mut labeler.encoder, grads.encoder.as_ref(), self.embed.as_mut())
        {
            for (&row, g) in &eg.embeddings {
                for col in 0..g.len() {
                    adam(&mut enc.embeddings[[row, col]], g[col], &mut m[[row, col]], &mut v[[row, col]]);
                }
            }
        }
    }
}

/// Hash of the sorted ids of a training set.
pub fn training_set_hash<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    sha256_hex(ids.join("\n").as_bytes())
}

pub fn train(
    labeler: &SequenceLabeler,
    labeled: &[(Sentence, TagSequence)],
    signals: Option<&BTreeMap<String, DistillationSignal>>,
    config: &TrainConfig,
) -> Result<(SequenceLabeler, TrainingReport)> {
    train_with_progress(labeler, labeled, signals, config, &mut |_| {})
}

/// Trains a copy of `labeler`. Every labeled sentence contributes the task
/// loss; those with an entry in `signals` also contribute the distillation
/// loss. `progress` receives the completed fraction after each epoch.
pub fn train_with_progress(
    labeler: &SequenceLabeler,
    labeled: &[(Sentence, TagSequence)],
    signals: Option<&BTreeMap<String, DistillationSignal>>,
    config: &TrainConfig,
    progress: &mut dyn FnMut(f64),
) -> Result<(SequenceLabeler, TrainingReport)> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::Usage("training needs at least one labeled sentence".into()));
    }
    for (sentence, tags) in labeled {
        labeler.labels.validate(&sentence.id, tags.as_slice(), sentence.len())?;
    }

    let started = Instant::now();
    let mut model = labeler.clone();
    let mut adam = Adam::new(&mut model, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut report = TrainingReport::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc = model.zero_grads();
            for &idx in batch {
                let (sentence, tags) = &labeled[idx];
                let signal = signals.and_then(|s| s.get(&sentence.id));
                let (loss, grads) =
                    model.loss_and_grads(sentence, Some(tags.as_slice()), signal, &config.loss, config.adapters_only)?;
                epoch_loss += loss;
                acc.add(&grads);
            }
            acc.scale(1.0 / batch.len() as f64);
            adam.update(&mut model, &acc, config.adapters_only);
            report.steps += 1;
        }
        report.epoch_losses.push(epoch_loss / labeled.len() as f64);
        progress((epoch + 1) as f64 / config.epochs as f64);
    }

    model.meta.epochs_trained += config.epochs;
    model.meta.optimizer_steps += report.steps;
    model.meta.optimizer = format!("adam(lr={}, batch={})", config.learning_rate, config.batch_size);
    model.meta.seed = config.seed;
    model.meta.trained_on = Some(training_set_hash(labeled.iter().map(|(s, _)| s.id.as_str())));
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((model, report))
}
