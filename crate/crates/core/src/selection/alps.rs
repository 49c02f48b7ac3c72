//! Surprisal embeddings from a masked language model, clustered without any
//! task model.

use std::collections::HashMap;

use ndarray::Array1;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cluster::{select_by_clusters, stack};
use super::{check_request, SelectionResult, Strategy, StrategyConfig};
use crate::checksum::stable_hash_str;
use crate::error::Result;
use crate::sentence::Sentence;

/// Per-token likelihoods of a masked language model.
pub trait MlmBackend: Sync {
    /// Negative log-likelihood of `tokens[position]` with that position masked.
    fn masked_nll(&self, tokens: &[String], position: usize) -> f64;
}

/// Interpolated bigram model over lowercased tokens: a masked token is
/// predicted from its left neighbour. Unfitted, every surprisal is zero.
#[derive(Debug, Clone, Default)]
pub struct ToyMlm {
    unigrams: HashMap<String, usize>,
    bigrams: HashMap<(String, String), usize>,
    /// How often each token appears as a left context.
    contexts: HashMap<String, usize>,
    total: usize,
}

const BIGRAM_WEIGHT: f64 = 0.7;

impl ToyMlm {
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut mlm = ToyMlm::default();
        for sentence in corpus {
            let mut prev = "<s>".to_string();
            for token in &sentence.tokens {
                let w = token.to_lowercase();
                *mlm.unigrams.entry(w.clone()).or_default() += 1;
                *mlm.contexts.entry(prev.clone()).or_default() += 1;
                *mlm.bigrams.entry((prev, w.clone())).or_default() += 1;
                mlm.total += 1;
                prev = w;
            }
        }
        mlm
    }

    fn unigram(&self, w: &str) -> f64 {
        let vocab = self.unigrams.len() as f64 + 1.0;
        (self.unigrams.get(w).copied().unwrap_or(0) as f64 + 1.0) / (self.total as f64 + vocab)
    }
}

impl MlmBackend for ToyMlm {
    fn masked_nll(&self, tokens: &[String], position: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let prev = if position == 0 { "<s>".to_string() } else { tokens[position - 1].to_lowercase() };
        let w = tokens[position].to_lowercase();
        let seen = self.contexts.get(&prev).copied().unwrap_or(0);
        let bigram = if seen == 0 {
            0.0
        } else {
            self.bigrams.get(&(prev, w.clone())).copied().unwrap_or(0) as f64 / seen as f64
        };
        let p = BIGRAM_WEIGHT * bigram + (1.0 - BIGRAM_WEIGHT) * self.unigram(&w);
        -p.ln()
    }
}

/// Sampled positions for a sentence: a pure function of the tokens and seed.
fn sampled_positions(tokens: &[String], len: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let count = ((fraction * len as f64).round() as usize).clamp(1, len);
    let joined: Vec<&str> = tokens.iter().map(String::as_str).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash_str(&joined));
    let mut picks = sample(&mut rng, len, count).into_vec();
    picks.sort_unstable();
    picks
}

/// Raw surprisal vector of length `max_len` before normalization.
pub fn surprisal_vector(mlm: &dyn MlmBackend, sentence: &Sentence, cfg: &StrategyConfig) -> (Array1<f64>, Vec<usize>) {
    let len = sentence.len().min(cfg.alps_max_len);
    let positions = sampled_positions(&sentence.tokens, len, cfg.alps_mask_fraction, cfg.seed);
    let mut v = Array1::zeros(cfg.alps_max_len);
    for &i in &positions {
        v[i] = mlm.masked_nll(&sentence.tokens, i).max(0.0);
    }
    (v, positions)
}

/// Unit-norm surprisal embedding. A sentence with zero surprisal at every
/// sampled position gets equal weight on those positions instead.
pub fn surprisal_embedding(mlm: &dyn MlmBackend, sentence: &Sentence, cfg: &StrategyConfig) -> Array1<f64> {
    let (mut v, positions) = surprisal_vector(mlm, sentence, cfg);
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v /= norm;
    } else {
        let w = 1.0 / (positions.len() as f64).sqrt();
        for &i in &positions {
            v[i] = w;
        }
    }
    v
}

pub(crate) fn select_alps(mlm: &dyn MlmBackend, pool: &[Sentence], cfg: &StrategyConfig) -> Result<SelectionResult> {
    check_request(pool, cfg.batch_size)?;
    let vectors: Vec<Array1<f64>> = pool.par_iter().map(|s| surprisal_embedding(mlm, s, cfg)).collect();
    select_by_clusters(Strategy::Alps, &stack(vectors), pool, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> StrategyConfig {
        StrategyConfig { alps_mask_fraction: 0.5, alps_max_len: 16, ..StrategyConfig::new(Strategy::Alps, 2, 3) }
    }

    fn corpus() -> Vec<Sentence> {
        let mut pool: Vec<Sentence> = (0..40)
            .map(|i| Sentence::new(format!("r{i}"), ["the", "cat", "sat", "on", "the", "mat"]).unwrap())
            .collect();
        pool.push(Sentence::new("odd", ["zebra", "quantum", "violin", "marsh", "tundra", "opal"]).unwrap());
        pool
    }

    #[test]
    fn embeddings_have_unit_norm() {
        let pool = corpus();
        let mlm = ToyMlm::fit(&pool);
        for s in &pool {
            let e = surprisal_embedding(&mlm, s, &cfg());
            assert!((e.dot(&e).sqrt() - 1.0).abs() < 1e-9);
            assert_eq!(e.len(), 16);
        }
        let unfitted = surprisal_embedding(&ToyMlm::default(), &pool[0], &cfg());
        assert!((unfitted.dot(&unfitted).sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn same_sentence_same_positions() {
        let s = &corpus()[0];
        let a = sampled_positions(&s.tokens, s.len(), 0.5, 7);
        assert_eq!(a, sampled_positions(&s.tokens, s.len(), 0.5, 7));
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn predictable_text_is_less_surprising() {
        let pool = corpus();
        let mlm = ToyMlm::fit(&pool);
        let mass = |s: &Sentence| surprisal_vector(&mlm, s, &cfg()).0.sum();
        assert!(mass(&pool[40]) > mass(&pool[0]));
    }

    #[test]
    fn selection_ignores_any_task_model_and_is_reproducible() {
        let pool = corpus();
        let mlm = ToyMlm::fit(&pool);
        let a = select_alps(&mlm, &pool, &cfg()).unwrap();
        let b = select_alps(&mlm, &pool, &cfg()).unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
        assert_eq!(a.selected_ids.len(), 2);
        assert_ne!(a.selected_ids[0], a.selected_ids[1]);
    }
}
