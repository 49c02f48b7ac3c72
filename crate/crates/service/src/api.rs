//! Request and response documents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tandem_core::error::SentenceIssue;
use tandem_core::labels::TokenSpan;
use tandem_core::orchestrator::{AnnotationBatch, IterationRecord, MainStatus, Phase};
use tandem_core::selection::Strategy;
use tandem_core::{LabelSet, TagSequence};

use crate::jobs::JobStatus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectCreated {
    pub project_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadAccepted {
    pub count: usize,
    /// Sentences that carried labels and were used as the seed set.
    pub seed_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSentence {
    pub id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub iteration: usize,
    pub strategy: Strategy,
    pub sentences: Vec<BatchSentence>,
    /// Entity types, in label-set order.
    pub labels: Vec<String>,
    /// BIO tag vocabulary, `O` first.
    pub tags: Vec<String>,
}

impl From<&AnnotationBatch> for BatchResponse {
    fn from(batch: &AnnotationBatch) -> Self {
        Self {
            iteration: batch.iteration,
            strategy: batch.strategy,
            sentences: batch.sentences.iter().map(|s| BatchSentence { id: s.id.clone(), tokens: s.tokens.clone() }).collect(),
            labels: batch.labels.types().to_vec(),
            tags: batch.labels.tags().to_vec(),
        }
    }
}

/// A labeled token range; both ends are inclusive token indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanAnnotation {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// One sentence's annotation: typed spans, or one BIO tag per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SentenceAnnotation {
    Spans { spans: Vec<SpanAnnotation> },
    Tags { tags: Vec<String> },
}

impl SentenceAnnotation {
    /// Converts to a tag sequence; errors are phrased for the annotator.
    pub fn to_tags(&self, labels: &LabelSet, sentence_id: &str, len: usize) -> Result<TagSequence, SentenceIssue> {
        let issue = |message: String| SentenceIssue { sentence_id: sentence_id.to_string(), message };
        let data_message = |e: tandem_core::Error| match e {
            tandem_core::Error::Data { message, .. } => message,
            other => other.to_string(),
        };
        match self {
            SentenceAnnotation::Spans { spans } => {
                let mut token_spans = Vec::with_capacity(spans.len());
                for s in spans {
                    if s.start > s.end || s.end >= len {
                        return Err(issue(format!(
                            "span ({}, {}) is not a range of token indices in a {len}-token sentence",
                            s.start, s.end
                        )));
                    }
                    token_spans.push(TokenSpan::new(s.start, s.end + 1, s.label.clone()));
                }
                labels.tags_from_spans(sentence_id, len, &token_spans).map(TagSequence).map_err(|e| issue(data_message(e)))
            }
            SentenceAnnotation::Tags { tags } => {
                labels.parse_tags(sentence_id, tags).map(TagSequence).map_err(|e| issue(data_message(e)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRequest {
    pub annotations: BTreeMap<String, SentenceAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationAccepted {
    pub accepted: usize,
    pub next_iteration: usize,
    /// Whether background main training had already finished; absent when
    /// none was running.
    pub main_training_finished: Option<bool>,
    /// Job that waits for main training and computes signals for this batch.
    pub job_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub project_id: String,
    pub phase: Phase,
    pub iteration: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub batch_size: usize,
    pub pending_batch: usize,
    /// Annotations were accepted and are being applied.
    pub submission_pending: bool,
    pub main_status: MainStatus,
    pub records: Vec<IterationRecord>,
    pub jobs: Vec<JobStatus>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeResponse {
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> LabelSet {
        LabelSet::new(["LOC", "PER"]).unwrap()
    }

    #[test]
    fn inclusive_spans_become_bio() {
        let a: SentenceAnnotation =
            serde_json::from_str(r#"{"spans":[{"start":0,"end":1,"label":"PER"},{"start":3,"end":3,"label":"LOC"}]}"#).unwrap();
        let labels = labels();
        let tags = a.to_tags(&labels, "s", 4).unwrap();
        let names: Vec<&str> = tags.0.iter().map(|&t| labels.tag_name(t)).collect();
        assert_eq!(names, ["B-PER", "I-PER", "O", "B-LOC"]);
    }

    #[test]
    fn overlapping_and_out_of_range_spans_are_rejected() {
        let overlap: SentenceAnnotation =
            serde_json::from_str(r#"{"spans":[{"start":0,"end":2,"label":"PER"},{"start":2,"end":3,"label":"LOC"}]}"#).unwrap();
        assert!(overlap.to_tags(&labels(), "s", 4).unwrap_err().message.contains("overlaps"));
        let outside: SentenceAnnotation = serde_json::from_str(r#"{"spans":[{"start":2,"end":4,"label":"PER"}]}"#).unwrap();
        assert!(outside.to_tags(&labels(), "s", 4).is_err());
    }

    #[test]
    fn tag_lists_are_parsed_not_validated() {
        let a: SentenceAnnotation = serde_json::from_str(r#"{"tags":["I-PER","O"]}"#).unwrap();
        let tags = a.to_tags(&labels(), "s", 2).unwrap();
        assert!(!labels().is_valid(tags.as_slice()), "BIO validity is checked on submission");
        let unknown: SentenceAnnotation = serde_json::from_str(r#"{"tags":["B-ORG"]}"#).unwrap();
        assert!(unknown.to_tags(&labels(), "s", 1).unwrap_err().message.contains("unknown tag"));
    }
}
