//! Corpus formats, project configuration, the simulated annotator, the
//! synthetic desk corpus and loading of finalized projects.

pub mod column;
pub mod config;
pub mod jsonl;
pub mod synth;
pub mod tokenize;
pub mod trained;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use column::{parse_column_corpus, parse_column_str, write_column};
pub use config::{LoopMode, ModelConfig, ProjectConfig, TrainingConfig};
pub use jsonl::{parse_jsonl_corpus, parse_jsonl_str, write_jsonl};
pub use tokenize::{tokenize, ConfiguredLanguage, LanguageDetector, RawToken};
pub use trained::{load_trained, PredictedSpan, TrainedModel};

use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::sentence::{Sentence, TagSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Column,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: Option<PathBuf>,
    pub format: CorpusFormat,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    /// Gold tags for the sentences that carry them.
    pub gold: Option<BTreeMap<String, TagSequence>>,
    pub labels: LabelSet,
    pub provenance: Option<Provenance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn gold_for(&self, id: &str) -> Option<&TagSequence> {
        self.gold.as_ref().and_then(|g| g.get(id))
    }

    /// Sentences paired with their gold tags, skipping unlabeled ones.
    pub fn labeled_pairs(&self) -> Vec<(Sentence, TagSequence)> {
        self.sentences
            .iter()
            .filter_map(|s| self.gold_for(&s.id).map(|t| (s.clone(), t.clone())))
            .collect()
    }

    /// Checks ids are unique and gold sequences are length-matched and BIO-valid.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.sentences {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::data(&s.id, "duplicate sentence id"));
            }
        }
        if let Some(gold) = &self.gold {
            let by_id: BTreeMap<&str, &Sentence> = self.sentences.iter().map(|s| (s.id.as_str(), s)).collect();
            for (id, tags) in gold {
                let s = by_id.get(id.as_str()).ok_or_else(|| Error::data(id, "gold tags for an unknown sentence"))?;
                self.labels.validate(id, tags.as_slice(), s.len())?;
            }
        }
        Ok(())
    }

    /// Splits off every `every`-th sentence (by position) as a held-out set.
    pub fn split_every(&self, every: usize) -> (Corpus, Corpus) {
        let (mut keep, mut held) = (Vec::new(), Vec::new());
        for (i, s) in self.sentences.iter().enumerate() {
            if every > 0 && i % every == every - 1 {
                held.push(s.clone());
            } else {
                keep.push(s.clone());
            }
        }
        (self.subset(keep), self.subset(held))
    }

    fn subset(&self, sentences: Vec<Sentence>) -> Corpus {
        let gold = self.gold.as_ref().map(|g| {
            sentences.iter().filter_map(|s| g.get(&s.id).map(|t| (s.id.clone(), t.clone()))).collect()
        });
        Corpus { sentences, gold, labels: self.labels.clone(), provenance: None }
    }
}

/// Infers a label set from BIO tag strings: every type named after `B-` or
/// `I-`, sorted.
pub(crate) fn infer_labels<'a>(tags: impl IntoIterator<Item = &'a str>) -> Result<LabelSet> {
    let mut types = std::collections::BTreeSet::new();
    for tag in tags {
        if let Some(t) = tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-")) {
            types.insert(t.to_string());
        }
    }
    LabelSet::new(types)
}

/// The simulated annotator: returns the gold tags of `ids` verbatim.
pub fn oracle_annotate<S: AsRef<str>>(corpus: &Corpus, ids: &[S]) -> Result<BTreeMap<String, TagSequence>> {
    ids.iter()
        .map(|id| {
            let id = id.as_ref();
            corpus
                .gold_for(id)
                .map(|t| (id.to_string(), t.clone()))
                .ok_or_else(|| Error::data(id, "no gold annotation for this sentence"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Corpus {
        parse_column_str("Obama B-PER\nspoke O\n\nParis B-LOC\n", true, None).unwrap()
    }

    #[test]
    fn oracle_returns_gold_verbatim() {
        let c = corpus();
        let id = c.sentences[1].id.clone();
        let out = oracle_annotate(&c, &[&id]).unwrap();
        assert_eq!(out[&id], c.gold.as_ref().unwrap()[&id]);
        assert!(c.labels.is_valid(out[&id].as_slice()));
        assert!(oracle_annotate(&c, &[] as &[&str]).unwrap().is_empty());
        assert!(oracle_annotate(&c, &["nope"]).is_err());
    }

    #[test]
    fn split_keeps_gold_with_sentences() {
        let (train, test) = corpus().split_every(2);
        assert_eq!((train.len(), test.len()), (1, 1));
        assert!(test.gold_for(&test.sentences[0].id).is_some());
        assert_eq!(train.gold.unwrap().len(), 1);
    }
}
