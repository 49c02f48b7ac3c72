//! Maximum normalized log-probability: prefer sentences whose best labeling
//! the model is least sure of, normalized by length.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{check_request, Diagnostics, SelectionResult, Strategy, StrategyConfig};
use crate::error::Result;
use crate::model::{CrfOutputs, SequenceLabeler};
use crate::sentence::Sentence;

/// `-(1/K) max_y log P(y | x)`. Non-negative; higher means more uncertain.
pub fn mnlp_score(outputs: &CrfOutputs) -> f64 {
    let score = -outputs.max_log_prob() / outputs.len() as f64;
    score.max(0.0)
}

/// Sorts `(index, score)` by score descending, then by id ascending.
pub(crate) fn rank_by_score(pool: &[Sentence], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| pool[a].id.cmp(&pool[b].id)));
    order
}

pub(crate) fn select_mnlp(model: &SequenceLabeler, pool: &[Sentence], cfg: &StrategyConfig) -> Result<SelectionResult> {
    check_request(pool, cfg.batch_size)?;
    let scores: Vec<f64> = pool
        .par_iter()
        .map(|s| model.outputs(s).map(|o| mnlp_score(&o)))
        .collect::<Result<_>>()?;
    let order = rank_by_score(pool, &scores);
    let selected: Vec<usize> = order.into_iter().take(cfg.batch_size).collect();
    Ok(SelectionResult {
        strategy: Strategy::Mnlp,
        selected_ids: selected.iter().map(|&i| pool[i].id.clone()).collect(),
        scores: Some(pool.iter().zip(&scores).map(|(s, &v)| (s.id.clone(), v)).collect::<BTreeMap<_, _>>()),
        diagnostics: Diagnostics::default(),
    })
}
