//! Cluster-then-pick-nearest selection shared by BERT-KM and ALPS.

use ndarray::Array2;
use rayon::prelude::*;

use super::kmeans::{kmeans_cluster, squared_distance};
use super::{check_request, Diagnostics, SelectionResult, Strategy, StrategyConfig};
use crate::error::Result;
use crate::model::SequenceLabeler;
use crate::sentence::Sentence;

/// Stacks per-sentence vectors into a matrix, in pool order.
pub(crate) fn stack(vectors: Vec<ndarray::Array1<f64>>) -> Array2<f64> {
    let d = vectors.first().map_or(0, |v| v.len());
    let mut out = Array2::zeros((vectors.len(), d));
    for (mut row, v) in out.rows_mut().into_iter().zip(vectors) {
        row.assign(&v);
    }
    out
}

/// For each center in order, the closest point not yet claimed by an
/// earlier center. Distance ties go to the lower pool index.
pub fn nearest_unclaimed(points: &Array2<f64>, centers: &Array2<f64>) -> Vec<usize> {
    let mut claimed = vec![false; points.nrows()];
    let mut picks = Vec::with_capacity(centers.nrows());
    for center in centers.rows() {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.rows().into_iter().enumerate() {
            if claimed[i] {
                continue;
            }
            let d = squared_distance(p, center);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("at most as many centers as points");
        claimed[i] = true;
        picks.push(i);
    }
    picks
}

pub(crate) fn select_by_clusters(
    strategy: Strategy,
    embeddings: &Array2<f64>,
    pool: &[Sentence],
    cfg: &StrategyConfig,
) -> Result<SelectionResult> {
    let clusters = kmeans_cluster(embeddings, cfg.batch_size, &cfg.kmeans, cfg.seed)?;
    let picks = nearest_unclaimed(embeddings, &clusters.centers);
    Ok(SelectionResult {
        strategy,
        selected_ids: picks.iter().map(|&i| pool[i].id.clone()).collect(),
        scores: None,
        diagnostics: Diagnostics {
            wall_time_seconds: 0.0,
            embedding_dim: Some(embeddings.ncols()),
            inertia: Some(clusters.inertia),
        },
    })
}

pub(crate) fn select_bertkm(model: &SequenceLabeler, pool: &[Sentence], cfg: &StrategyConfig) -> Result<SelectionResult> {
    check_request(pool, cfg.batch_size)?;
    let vectors = pool.par_iter().map(|s| model.sentence_embedding(s)).collect::<Result<Vec<_>>>()?;
    select_by_clusters(Strategy::BertKm, &stack(vectors), pool, cfg)
}
