//! Uniform sampling without replacement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::uniform_subset;
use super::{check_request, Diagnostics, SelectionResult, Strategy, StrategyConfig};
use crate::error::Result;
use crate::sentence::Sentence;

pub(crate) fn select_random(pool: &[Sentence], cfg: &StrategyConfig) -> Result<SelectionResult> {
    check_request(pool, cfg.batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks = uniform_subset(pool.len(), cfg.batch_size, &mut rng);
    Ok(SelectionResult {
        strategy: Strategy::Random,
        selected_ids: picks.into_iter().map(|i| pool[i].id.clone()).collect(),
        scores: None,
        diagnostics: Diagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize) -> Vec<Sentence> {
        (0..n).map(|i| Sentence::new(format!("s{i}"), ["w"]).unwrap()).collect()
    }

    #[test]
    fn full_draw_is_a_permutation() {
        let p = pool(10);
        let mut ids = select_random(&p, &StrategyConfig::new(Strategy::Random, 10, 4)).unwrap().selected_ids;
        ids.sort();
        let mut expected: Vec<String> = p.iter().map(|s| s.id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
    }

    #[test]
    fn single_draws_are_uniform() {
        let p = pool(10);
        let mut counts = std::collections::HashMap::new();
        let draws = 10_000;
        for seed in 0..draws {
            let r = select_random(&p, &StrategyConfig::new(Strategy::Random, 1, seed)).unwrap();
            *counts.entry(r.selected_ids[0].clone()).or_insert(0usize) += 1;
        }
        let expected = draws as f64 / 10.0;
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for s in &p {
            let c = counts.get(&s.id).copied().unwrap_or(0) as f64;
            assert!((c - expected).abs() <= 3.0 * sigma, "{} drawn {c} times", s.id);
        }
    }

    #[test]
    fn oversized_request_fails() {
        assert!(select_random(&pool(3), &StrategyConfig::new(Strategy::Random, 4, 0)).is_err());
    }
}
