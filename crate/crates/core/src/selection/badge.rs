//! Gradient embeddings: per-token gradients of the self-labeled
//! cross-entropy with respect to the output layer, pooled over the sentence.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cluster::stack;
use super::kmeans::kmeans_pp_seeds;
use super::{check_request, Diagnostics, SelectionResult, Strategy, StrategyConfig};
use crate::error::Result;
use crate::model::crf::argmax;
use crate::model::SequenceLabeler;
use crate::sentence::Sentence;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadgePooling {
    #[default]
    Mean,
    /// Element-wise maximum of absolute values.
    Max,
}

/// Gradient embedding from token vectors `h` (`K x d`) and tag distributions
/// `p` (`K x V`). The result is `V * d` long, laid out tag-major.
pub fn gradient_embedding(h: &Array2<f64>, p: &Array2<f64>, pooling: BadgePooling) -> Array1<f64> {
    let (k, d) = h.dim();
    let v = p.ncols();
    let mut out = Array1::zeros(v * d);
    for i in 0..k {
        let pred = argmax(p.row(i));
        for tag in 0..v {
            let coef = p[[i, tag]] - if tag == pred { 1.0 } else { 0.0 };
            for j in 0..d {
                let g = coef * h[[i, j]];
                let slot = &mut out[tag * d + j];
                match pooling {
                    BadgePooling::Mean => *slot += g / k as f64,
                    BadgePooling::Max => *slot = f64::max(*slot, g.abs()),
                }
            }
        }
    }
    out
}

pub fn badge_embedding(model: &SequenceLabeler, sentence: &Sentence, pooling: BadgePooling) -> Result<Array1<f64>> {
    let (h, p) = model.token_view(sentence)?;
    Ok(gradient_embedding(&h, &p, pooling))
}

pub(crate) fn select_from_embeddings(embeddings: &Array2<f64>, pool: &[Sentence], cfg: &StrategyConfig) -> Result<SelectionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = kmeans_pp_seeds(embeddings, cfg.batch_size, &mut rng)?;
    Ok(SelectionResult {
        strategy: Strategy::Badge,
        selected_ids: seeds.iter().map(|&i| pool[i].id.clone()).collect(),
        scores: None,
        diagnostics: Diagnostics { wall_time_seconds: 0.0, embedding_dim: Some(embeddings.ncols()), inertia: None },
    })
}

pub(crate) fn select_badge(model: &SequenceLabeler, pool: &[Sentence], cfg: &StrategyConfig) -> Result<SelectionResult> {
    check_request(pool, cfg.batch_size)?;
    let vectors = pool
        .par_iter()
        .map(|s| badge_embedding(model, s, cfg.badge_pooling))
        .collect::<Result<Vec<_>>>()?;
    select_from_embeddings(&stack(vectors), pool, cfg)
}
