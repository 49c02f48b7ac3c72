//! JSON Lines corpora. Each line is one object:
//!
//! ```json
//! {"id": "doc1-3", "text": "Obama spoke in Paris", "language": "en",
//!  "spans": [{"start": 0, "end": 5, "label": "PER"}, {"start": 15, "end": 20, "label": "LOC"}]}
//! ```
//!
//! Either `text` (tokenized on whitespace and punctuation) or `tokens` must be
//! present. `offsets` gives explicit `[start, end)` character offsets per
//! token; without it, tokens are located in `text`, or laid out with single
//! spaces when there is no text. `spans` use character offsets and must start
//! and end on token boundaries. `tags` (BIO strings) is accepted instead of
//! `spans`. Lines without either are unlabeled.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::{align_tokens, joined_offsets, tokenize};
use super::{infer_labels, Corpus, CorpusFormat, Provenance};
use crate::checksum::sha256_hex;
use crate::error::{Error, Result};
use crate::labels::{LabelSet, TokenSpan};
use crate::sentence::{content_id, Sentence, TagSequence};

/// A labeled region in character offsets, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offsets: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spans: Option<Vec<CharSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<String>>,
}

pub fn parse_jsonl_corpus(path: &Path, labels: Option<&LabelSet>) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = parse_jsonl_str(&text, labels)?;
    if let Some(p) = corpus.provenance.as_mut() {
        p.path = Some(path.to_path_buf());
    }
    Ok(corpus)
}

/// Converts character spans to token spans, requiring boundary alignment.
pub fn char_spans_to_tokens(offsets: &[(usize, usize)], spans: &[CharSpan]) -> std::result::Result<Vec<TokenSpan>, String> {
    spans
        .iter()
        .map(|span| {
            let start = offsets.iter().position(|&(s, _)| s == span.start);
            let end = offsets.iter().position(|&(_, e)| e == span.end);
            match (start, end) {
                (Some(s), Some(e)) if s <= e => Ok(TokenSpan { start: s, end: e + 1, label: span.label.clone() }),
                _ => Err(format!(
                    "span [{}, {}) {:?} does not align with token boundaries",
                    span.start, span.end, span.label
                )),
            }
        })
        .collect()
}

pub fn token_spans_to_chars(offsets: &[(usize, usize)], spans: &[TokenSpan]) -> Vec<CharSpan> {
    spans
        .iter()
        .map(|s| CharSpan { start: offsets[s.start].0, end: offsets[s.end - 1].1, label: s.label.clone() })
        .collect()
}

struct Parsed {
    sentence: Sentence,
    offsets: Vec<(usize, usize)>,
    spans: Option<Vec<CharSpan>>,
    tags: Option<Vec<String>>,
    line: usize,
}

fn parse_line(line: &str, line_no: usize, index: usize) -> Result<Parsed> {
    let parse_err = |message: String| Error::Parse { line: line_no, message };
    let record: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let (tokens, offsets, explicit) = match (&record.tokens, &record.text) {
        (Some(tokens), text) => {
            let offsets = match (&record.offsets, text) {
                (Some(o), _) => o.clone(),
                (None, Some(text)) => align_tokens(text, tokens)
                    .map_err(|i| parse_err(format!("token {i} ({:?}) does not occur in the text", tokens[i])))?,
                (None, None) => joined_offsets(tokens),
            };
            let explicit = record.offsets.is_some() || text.is_some();
            (tokens.clone(), offsets, explicit)
        }
        (None, Some(text)) => {
            let raw = tokenize(text);
            let offsets = raw.iter().map(|t| (t.start, t.end)).collect();
            (raw.into_iter().map(|t| t.text).collect(), offsets, true)
        }
        (None, None) => return Err(parse_err("object has neither \"text\" nor \"tokens\"".into())),
    };
    if tokens.is_empty() {
        return Err(parse_err("sentence has no tokens".into()));
    }
    let id = record.id.clone().unwrap_or_else(|| content_id(index, &tokens));
    let mut sentence = Sentence { id, tokens, language: record.language, source_offsets: None };
    if explicit {
        sentence.source_offsets = Some(offsets.clone());
    }
    sentence.validate().map_err(|e| parse_err(e.to_string()))?;
    if record.spans.is_some() && record.tags.is_some() {
        return Err(parse_err("give either \"spans\" or \"tags\", not both".into()));
    }
    Ok(Parsed { sentence, offsets, spans: record.spans, tags: record.tags, line: line_no })
}

pub fn parse_jsonl_str(text: &str, labels: Option<&LabelSet>) -> Result<Corpus> {
    let mut parsed = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        parsed.push(parse_line(line, idx + 1, parsed.len())?);
    }

    let labels = match labels {
        Some(l) => l.clone(),
        None => {
            let mut types = BTreeSet::new();
            for p in &parsed {
                types.extend(p.spans.iter().flatten().map(|s| s.label.clone()));
                let tag_types = infer_labels(p.tags.iter().flatten().map(String::as_str))?;
                types.extend(tag_types.types().iter().cloned());
            }
            LabelSet::new(types)?
        }
    };

    let mut seen = BTreeSet::new();
    let mut gold = BTreeMap::new();
    let mut sentences = Vec::with_capacity(parsed.len());
    for p in parsed {
        let parse_err = |message: String| Error::Parse { line: p.line, message };
        if !seen.insert(p.sentence.id.clone()) {
            return Err(parse_err(format!("duplicate id {:?}", p.sentence.id)));
        }
        let tags = if let Some(spans) = &p.spans {
            let token_spans = char_spans_to_tokens(&p.offsets, spans).map_err(parse_err)?;
            Some(
                labels
                    .tags_from_spans(&p.sentence.id, p.sentence.len(), &token_spans)
                    .map_err(|e| parse_err(e.to_string()))?,
            )
        } else if let Some(tags) = &p.tags {
            if tags.len() != p.sentence.len() {
                return Err(parse_err(format!("{} tags for {} tokens", tags.len(), p.sentence.len())));
            }
            let ids = labels.parse_tags(&p.sentence.id, tags).map_err(|e| parse_err(e.to_string()))?;
            labels.validate(&p.sentence.id, &ids, ids.len()).map_err(|e| parse_err(e.to_string()))?;
            Some(ids)
        } else {
            None
        };
        if let Some(tags) = tags {
            gold.insert(p.sentence.id.clone(), TagSequence(tags));
        }
        sentences.push(p.sentence);
    }
    let any_gold = !gold.is_empty();
    Ok(Corpus {
        sentences,
        gold: any_gold.then_some(gold),
        labels,
        provenance: Some(Provenance { path: None, format: CorpusFormat::Jsonl, sha256: sha256_hex(text.as_bytes()) }),
    })
}

/// Canonical JSONL: `id`, `tokens`, `offsets` when known, `language` when
/// set, and character `spans` for sentences with gold tags.
pub fn write_jsonl(corpus: &Corpus) -> Result<String> {
    let mut out = String::new();
    for s in &corpus.sentences {
        let offsets = s.source_offsets.clone().unwrap_or_else(|| joined_offsets(&s.tokens));
        let spans = corpus
            .gold_for(&s.id)
            .map(|tags| token_spans_to_chars(&offsets, &corpus.labels.spans(tags.as_slice())));
        let record = Record {
            id: Some(s.id.clone()),
            tokens: Some(s.tokens.clone()),
            offsets: s.source_offsets.clone(),
            language: s.language.clone(),
            spans,
            ..Record::default()
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_only_line_is_unlabeled() {
        let c = parse_jsonl_str(r#"{"tokens":["Obama","spoke"]}"#, None).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.gold.is_none());
    }

    #[test]
    fn character_span_becomes_bio() {
        let c = parse_jsonl_str(r#"{"text":"Obama spoke","spans":[{"start":0,"end":5,"label":"PER"}]}"#, None).unwrap();
        let tags = &c.gold.as_ref().unwrap()[&c.sentences[0].id];
        let names: Vec<&str> = tags.0.iter().map(|&t| c.labels.tag_name(t)).collect();
        assert_eq!(names, ["B-PER", "O"]);
    }

    #[test]
    fn misaligned_span_cites_line() {
        let text = "{\"tokens\":[\"x\"]}\n{\"text\":\"Obama spoke\",\"spans\":[{\"start\":0,\"end\":3,\"label\":\"PER\"}]}";
        let err = parse_jsonl_str(text, None).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("[0, 3)"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse_jsonl_str("{\"tokens\":[\"a\"]}\n{oops", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn bio_tags_are_accepted() {
        let c = parse_jsonl_str(r#"{"tokens":["New","York"],"tags":["B-LOC","I-LOC"]}"#, None).unwrap();
        assert_eq!(c.labels.types(), ["LOC"]);
        assert!(parse_jsonl_str(r#"{"tokens":["New","York"],"tags":["O","I-LOC"]}"#, None).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let text = concat!(
            r#"{"id":"a","text":"Ada met Alan in London.","language":"en","spans":[{"start":0,"end":3,"label":"PER"},{"start":16,"end":22,"label":"LOC"}]}"#,
            "\n",
            r#"{"id":"b","tokens":["nothing","here"]}"#,
            "\n",
            r#"{"id":"c","tokens":["New","York"],"spans":[{"start":0,"end":8,"label":"LOC"}]}"#,
        );
        let c = parse_jsonl_str(text, None).unwrap();
        let written = write_jsonl(&c).unwrap();
        let again = parse_jsonl_str(&written, None).unwrap();
        assert_eq!(again.sentences, c.sentences);
        assert_eq!(again.gold, c.gold);
        assert_eq!(again.labels, c.labels);
        assert_eq!(write_jsonl(&again).unwrap(), written);
    }
}
