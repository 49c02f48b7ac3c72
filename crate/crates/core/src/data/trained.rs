//! Loading the result of a finalized project: the final main model plus the
//! labeled dataset, with prediction on raw text.
//!
//! A finalized project holds an `export/` directory:
//!
//! ```text
//! export/
//!   report.json     format_version, phase "FINALIZED", counts, iteration records
//!   labeled.jsonl   every labeled sentence, span schema
//!   model/          checkpoint of the final main model
//! ```
//!
//! [`load_trained`] accepts the project directory or the export directory
//! itself (as unpacked from an export archive).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::jsonl::{parse_jsonl_corpus, token_spans_to_chars};
use super::tokenize::{tokenize, ConfiguredLanguage, LanguageDetector};
use super::Corpus;
use crate::error::{Error, Result};
use crate::model::checkpoint::{self, check_version};
use crate::model::SequenceLabeler;
use crate::sentence::Sentence;

pub const EXPORT_DIR: &str = "export";
pub const REPORT_FILE: &str = "report.json";
pub const LABELED_FILE: &str = "labeled.jsonl";
pub const MODEL_DIR: &str = "model";
pub const EXPORT_FORMAT_VERSION: &str = "1.0";

/// An entity found in raw text, in character offsets (end exclusive) and
/// token indices (end exclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
    pub text: String,
    pub token_start: usize,
    pub token_end: usize,
}

pub struct TrainedModel {
    pub labeler: SequenceLabeler,
    pub labeled: Corpus,
    pub detector: Box<dyn LanguageDetector>,
}

impl std::fmt::Debug for TrainedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainedModel")
            .field("labels", &self.labeler.labels)
            .field("labeled", &self.labeled.len())
            .finish_non_exhaustive()
    }
}

impl TrainedModel {
    pub fn with_detector(mut self, detector: Box<dyn LanguageDetector>) -> Self {
        self.detector = detector;
        self
    }

    /// Tokenizes `text`, decodes it and returns the typed entity spans.
    pub fn predict(&self, text: &str) -> Result<Vec<PredictedSpan>> {
        let raw = tokenize(text);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        let offsets: Vec<(usize, usize)> = raw.iter().map(|t| (t.start, t.end)).collect();
        let mut sentence = Sentence::new("input", raw.iter().map(|t| t.text.clone()))?.with_offsets(offsets.clone())?;
        sentence.language = self.detector.detect(text);
        let tags = self.labeler.predict(&sentence)?;
        let token_spans = self.labeler.labels.spans(tags.as_slice());
        let chars: Vec<char> = text.chars().collect();
        Ok(token_spans_to_chars(&offsets, &token_spans)
            .into_iter()
            .zip(token_spans)
            .map(|(c, t)| PredictedSpan {
                text: chars[c.start..c.end].iter().collect(),
                start: c.start,
                end: c.end,
                label: c.label,
                token_start: t.start,
                token_end: t.end,
            })
            .collect())
    }
}

/// Finds the export directory for a project or export path.
pub fn export_root(path: &Path) -> Result<PathBuf> {
    if path.join(REPORT_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    let nested = path.join(EXPORT_DIR);
    if nested.join(REPORT_FILE).is_file() {
        return Ok(nested);
    }
    if path.is_dir() {
        Err(Error::State(format!("{} is not a finalized project (no export report)", path.display())))
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory")))
    }
}

pub fn load_trained(path: &Path) -> Result<TrainedModel> {
    let root = export_root(path)?;
    let report_path = root.join(REPORT_FILE);
    let bytes = fs::read(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let report: serde_json::Value = serde_json::from_slice(&bytes)?;
    check_version(report.get("format_version").and_then(|v| v.as_str()).unwrap_or("missing"))?;
    if report.get("phase").and_then(|v| v.as_str()) != Some("FINALIZED") {
        return Err(Error::State("the export report does not describe a finalized project".into()));
    }
    let labeler = checkpoint::load(&root.join(MODEL_DIR))?;
    let labeled = parse_jsonl_corpus(&root.join(LABELED_FILE), Some(&labeler.labels))?;
    let language = report.get("language").and_then(|v| v.as_str()).map(str::to_string);
    Ok(TrainedModel { labeler, labeled, detector: Box::new(ConfiguredLanguage(language)) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::LabelSet;
    use crate::model::EncoderBackend;

    #[test]
    fn unfinalized_directory_is_a_state_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_trained(dir.path()), Err(Error::State(_))));
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(REPORT_FILE), r#"{"format_version":"7.0","phase":"FINALIZED"}"#).unwrap();
        let err = load_trained(dir.path()).unwrap_err().to_string();
        assert!(err.contains("7.0") && err.contains("major version 1"), "{err}");
    }

    #[test]
    fn predictions_carry_character_offsets() {
        let labels = LabelSet::new(["PER"]).unwrap();
        let labeler = SequenceLabeler::new(EncoderBackend::toy(8), labels.clone(), 3, true);
        let model = TrainedModel {
            labeler,
            labeled: Corpus { sentences: vec![], gold: None, labels, provenance: None },
            detector: Box::new(ConfiguredLanguage(None)),
        };
        let text = "Barack  Obama spoke, twice.";
        for span in model.predict(text).unwrap() {
            let slice: String = text.chars().skip(span.start).take(span.end - span.start).collect();
            assert_eq!(slice, span.text);
            assert!(span.token_start < span.token_end);
        }
        assert!(model.predict("   ").unwrap().is_empty());
    }
}
