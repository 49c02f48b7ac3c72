//! Entity-level evaluation: a predicted entity counts only when its span
//! boundaries and type both match a gold entity exactly.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::labels::LabelSet;
use crate::model::SequenceLabeler;
use crate::sentence::{Sentence, TagSequence};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityScores {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl EntityScores {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.true_positives as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.true_positives as f64 / self.gold as f64
        }
    }

    /// Micro-averaged F1 over all entity types.
    pub fn f1(&self) -> f64 {
        let denom = self.predicted + self.gold;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.true_positives as f64 / denom as f64
        }
    }

    pub fn add(&mut self, other: EntityScores) {
        self.true_positives += other.true_positives;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }
}

pub fn score_sequence(labels: &LabelSet, gold: &[usize], predicted: &[usize]) -> EntityScores {
    let g: HashSet<_> = labels.spans(gold).into_iter().collect();
    let p: HashSet<_> = labels.spans(predicted).into_iter().collect();
    EntityScores { true_positives: g.intersection(&p).count(), predicted: p.len(), gold: g.len() }
}

/// Scores `model` on gold-labeled sentences.
pub fn evaluate(model: &SequenceLabeler, test: &[(Sentence, TagSequence)]) -> Result<EntityScores> {
    let mut total = EntityScores::default();
    for (sentence, gold) in test {
        let predicted = model.predict(sentence)?;
        total.add(score_sequence(&model.labels, gold.as_slice(), predicted.as_slice()));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_only() {
        let labels = LabelSet::new(["PER", "LOC"]).unwrap();
        // gold: [B-PER I-PER O B-LOC]; predicted: [B-PER O O B-PER]
        let gold = [1, 2, 0, 3];
        let pred = [1, 0, 0, 1];
        let s = score_sequence(&labels, &gold, &pred);
        assert_eq!(s, EntityScores { true_positives: 0, predicted: 2, gold: 2 });
        let s = score_sequence(&labels, &gold, &gold);
        assert_eq!(s.f1(), 1.0);
    }

    #[test]
    fn micro_average_pools_counts() {
        let mut total = EntityScores { true_positives: 1, predicted: 1, gold: 3 };
        total.add(EntityScores { true_positives: 1, predicted: 3, gold: 1 });
        assert!((total.f1() - 0.5).abs() < 1e-12);
        assert!((total.precision() - 0.5).abs() < 1e-12);
    }
}
