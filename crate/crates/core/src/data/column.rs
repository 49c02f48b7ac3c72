//! Token-per-line column format: `token` or `token<sep>...<sep>tag`, one
//! token per line, blank lines between sentences, `-DOCSTART-` lines ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{infer_labels, Corpus, CorpusFormat, Provenance};
use crate::checksum::sha256_hex;
use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::sentence::{content_id, Sentence, TagSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Delimiter {
    Tab,
    Space,
}

impl Delimiter {
    fn of(line: &str) -> Option<Self> {
        if line.contains('\t') {
            Some(Delimiter::Tab)
        } else if line.contains(' ') {
            Some(Delimiter::Space)
        } else {
            None
        }
    }

    fn split(self, line: &str) -> Vec<&str> {
        match self {
            Delimiter::Tab => line.split('\t').map(str::trim).filter(|f| !f.is_empty()).collect(),
            Delimiter::Space => line.split_whitespace().collect(),
        }
    }
}

struct Row<'a> {
    line: usize,
    token: &'a str,
    tag: Option<&'a str>,
}

pub fn parse_column_corpus(path: &Path, has_labels: bool) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = parse_column_str(&text, has_labels, None)?;
    if let Some(p) = corpus.provenance.as_mut() {
        p.path = Some(path.to_path_buf());
    }
    Ok(corpus)
}

/// Parses column text. With `labels` given, tags must belong to it; otherwise
/// the label set is inferred from the tags seen.
pub fn parse_column_str(text: &str, has_labels: bool, labels: Option<&LabelSet>) -> Result<Corpus> {
    let mut blocks: Vec<Vec<Row>> = vec![Vec::new()];
    let mut delimiter: Option<(Delimiter, usize)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !blocks.last().expect("non-empty").is_empty() {
                blocks.push(Vec::new());
            }
            continue;
        }
        if line.trim_start().starts_with("-DOCSTART-") {
            continue;
        }
        let line = line.trim();
        if let Some(d) = Delimiter::of(line) {
            match delimiter {
                None => delimiter = Some((d, line_no)),
                Some((seen, first)) if seen != d => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("mixed delimiters: line {first} uses {seen:?}, this line uses {d:?}"),
                    })
                }
                _ => {}
            }
        }
        let fields = delimiter.map_or_else(|| vec![line], |(d, _)| d.split(line));
        let tag = if has_labels {
            if fields.len() < 2 {
                return Err(Error::Parse { line: line_no, message: "expected a token and a tag".into() });
            }
            Some(*fields.last().expect("two fields"))
        } else {
            None
        };
        blocks.last_mut().expect("non-empty").push(Row { line: line_no, token: fields[0], tag });
    }
    blocks.retain(|b| !b.is_empty());

    let labels = match labels {
        Some(l) => l.clone(),
        None if has_labels => infer_labels(blocks.iter().flatten().filter_map(|r| r.tag))?,
        None => LabelSet::new(Vec::<String>::new())?,
    };

    let mut sentences = Vec::with_capacity(blocks.len());
    let mut gold = BTreeMap::new();
    for (index, block) in blocks.iter().enumerate() {
        let tokens: Vec<String> = block.iter().map(|r| r.token.to_string()).collect();
        let id = content_id(index, &tokens);
        if has_labels {
            let mut tags = Vec::with_capacity(block.len());
            for row in block {
                let tag_str = row.tag.expect("labeled row");
                let tag = labels.tag_index(tag_str).ok_or_else(|| Error::Parse {
                    line: row.line,
                    message: format!("unknown tag {tag_str:?}"),
                })?;
                if !labels.transition_allowed(tags.last().copied(), tag) {
                    return Err(Error::Parse {
                        line: row.line,
                        message: format!("invalid BIO transition into {tag_str:?}"),
                    });
                }
                tags.push(tag);
            }
            gold.insert(id.clone(), TagSequence(tags));
        }
        sentences.push(Sentence { id, tokens, language: None, source_offsets: None });
    }

    Ok(Corpus {
        sentences,
        gold: has_labels.then_some(gold),
        labels,
        provenance: Some(Provenance { path: None, format: CorpusFormat::Column, sha256: sha256_hex(text.as_bytes()) }),
    })
}

/// Writes tab-separated columns; tags are included when gold is present.
pub fn write_column(corpus: &Corpus) -> String {
    let mut out = String::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let tags = corpus.gold_for(&s.id);
        for (j, token) in s.tokens.iter().enumerate() {
            out.push_str(token);
            if let Some(tags) = tags {
                out.push('\t');
                out.push_str(corpus.labels.tag_name(tags.0[j]));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_labeled_sentences() {
        let text = "-DOCSTART- -X- O O\n\nBarack B-PER\nObama I-PER\nspoke O\n\nin O\nParis B-LOC\n";
        let c = parse_column_str(text, true, None).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.labels.types(), ["LOC", "PER"]);
        let gold = &c.gold.as_ref().unwrap()[&c.sentences[0].id];
        assert_eq!(c.labels.tag_name(gold.0[1]), "I-PER");
        assert!(c.sentences[0].id.starts_with("s000000-"));
    }

    #[test]
    fn rejects_inside_after_outside_at_its_line() {
        let err = parse_column_str("a O\nb I-PER\n", true, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_mixed_delimiters() {
        let err = parse_column_str("a\tO\nb O\n", true, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn unlabeled_file_has_no_gold() {
        let c = parse_column_str("a\nb\n\nc\n", false, None).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.gold.is_none());
        assert_eq!(c.sentences[1].tokens, ["c"]);
    }

    #[test]
    fn multi_column_rows_take_first_and_last() {
        let c = parse_column_str("EU NNP B-NP B-ORG\nrejects VBZ B-VP O\n", true, None).unwrap();
        assert_eq!(c.sentences[0].tokens, ["EU", "rejects"]);
        assert_eq!(c.labels.types(), ["ORG"]);
    }

    #[test]
    fn write_then_parse_is_identity() {
        let c = parse_column_str("Barack\tB-PER\nObama\tI-PER\n\nin\tO\nParis\tB-LOC\n", true, None).unwrap();
        let again = parse_column_str(&write_column(&c), true, None).unwrap();
        assert_eq!(again.sentences, c.sentences);
        assert_eq!(again.gold, c.gold);
        assert_eq!(again.labels, c.labels);
    }
}
