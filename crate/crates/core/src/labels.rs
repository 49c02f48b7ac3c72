//! Entity types, the derived BIO tag vocabulary, and conversions between tag
//! paths and typed token spans.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TagId = usize;

/// Index of the outside tag in every vocabulary.
pub const OUTSIDE: TagId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagKind {
    Outside,
    Begin(usize),
    Inside(usize),
}

/// User-defined entity (or trigger) types and the tag vocabulary
/// `[O, B-t1, I-t1, B-t2, I-t2, ...]` derived from them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    types: Vec<String>,
    tags: Vec<String>,
}

impl LabelSet {
    pub fn new<I, S>(types: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        for (i, name) in types.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Config("label type names must be non-empty".into()));
            }
            if name.contains('-') {
                return Err(Error::Config(format!(
                    "label type {name:?} contains the BIO separator '-'"
                )));
            }
            if name.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("label type {name:?} contains whitespace")));
            }
            if name == "O" {
                return Err(Error::Config("\"O\" is reserved for the outside tag".into()));
            }
            if types[..i].contains(name) {
                return Err(Error::Config(format!("duplicate label type {name:?}")));
            }
        }
        let mut tags = Vec::with_capacity(2 * types.len() + 1);
        tags.push("O".to_string());
        for t in &types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        Ok(Self { types, tags })
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    /// The tag vocabulary in index order.
    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t == name)
    }

    pub fn tag_index(&self, tag: &str) -> Option<TagId> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn tag_name(&self, tag: TagId) -> &str {
        &self.tags[tag]
    }

    pub fn begin(&self, type_idx: usize) -> TagId {
        1 + 2 * type_idx
    }

    pub fn inside(&self, type_idx: usize) -> TagId {
        2 + 2 * type_idx
    }

    pub fn kind(&self, tag: TagId) -> TagKind {
        if tag == OUTSIDE {
            TagKind::Outside
        } else if tag % 2 == 1 {
            TagKind::Begin((tag - 1) / 2)
        } else {
            TagKind::Inside((tag - 2) / 2)
        }
    }

    /// Whether `to` may follow `from` (`None` is the sequence start).
    pub fn transition_allowed(&self, from: Option<TagId>, to: TagId) -> bool {
        match self.kind(to) {
            TagKind::Inside(t) => matches!(
                from.map(|f| self.kind(f)),
                Some(TagKind::Begin(s) | TagKind::Inside(s)) if s == t
            ),
            _ => true,
        }
    }

    /// Position of the first BIO violation, if any.
    pub fn first_violation(&self, tags: &[TagId]) -> Option<usize> {
        let mut prev = None;
        for (i, &tag) in tags.iter().enumerate() {
            if tag >= self.num_tags() || !self.transition_allowed(prev, tag) {
                return Some(i);
            }
            prev = Some(tag);
        }
        None
    }

    pub fn is_valid(&self, tags: &[TagId]) -> bool {
        self.first_violation(tags).is_none()
    }

    /// Checks vocabulary membership, length and BIO validity for one sentence.
    pub fn validate(&self, sentence_id: &str, tags: &[TagId], len: usize) -> Result<()> {
        if tags.len() != len {
            return Err(Error::data(
                sentence_id,
                format!("tag sequence has {} tags for {} tokens", tags.len(), len),
            ));
        }
        if let Some(&bad) = tags.iter().find(|&&t| t >= self.num_tags()) {
            return Err(Error::data(
                sentence_id,
                format!("tag index {bad} is outside the {}-tag vocabulary", self.num_tags()),
            ));
        }
        if let Some(pos) = self.first_violation(tags) {
            let prev = if pos == 0 { "sentence start" } else { self.tag_name(tags[pos - 1]) };
            return Err(Error::data(
                sentence_id,
                format!(
                    "invalid BIO transition at token {pos}: {} after {prev}",
                    self.tag_name(tags[pos])
                ),
            ));
        }
        Ok(())
    }

    pub fn parse_tags<S: AsRef<str>>(&self, sentence_id: &str, tags: &[S]) -> Result<Vec<TagId>> {
        tags.iter()
            .map(|t| {
                self.tag_index(t.as_ref()).ok_or_else(|| {
                    Error::data(sentence_id, format!("unknown tag {:?}", t.as_ref()))
                })
            })
            .collect()
    }

    /// Decodes a BIO-valid path into typed spans.
    pub fn spans(&self, tags: &[TagId]) -> Vec<TokenSpan> {
        let mut spans = Vec::new();
        let mut open: Option<(usize, usize)> = None;
        for (i, &tag) in tags.iter().enumerate() {
            match self.kind(tag) {
                TagKind::Inside(t) if open.is_some_and(|(_, ot)| ot == t) => {}
                kind => {
                    if let Some((start, t)) = open.take() {
                        spans.push(TokenSpan::new(start, i, &self.types[t]));
                    }
                    match kind {
                        TagKind::Begin(t) | TagKind::Inside(t) => open = Some((i, t)),
                        TagKind::Outside => {}
                    }
                }
            }
        }
        if let Some((start, t)) = open {
            spans.push(TokenSpan::new(start, tags.len(), &self.types[t]));
        }
        spans
    }

    /// Encodes non-overlapping spans over a sentence of `len` tokens.
    pub fn tags_from_spans(&self, sentence_id: &str, len: usize, spans: &[TokenSpan]) -> Result<Vec<TagId>> {
        let mut tags = vec![OUTSIDE; len];
        let mut covered = vec![false; len];
        for span in spans {
            if span.start >= span.end || span.end > len {
                return Err(Error::data(
                    sentence_id,
                    format!("span [{}, {}) is empty or exceeds {len} tokens", span.start, span.end),
                ));
            }
            let t = self.type_index(&span.label).ok_or_else(|| {
                Error::data(sentence_id, format!("unknown label {:?}", span.label))
            })?;
            if covered[span.start..span.end].iter().any(|&c| c) {
                return Err(Error::data(
                    sentence_id,
                    format!("span [{}, {}) overlaps another span", span.start, span.end),
                ));
            }
            tags[span.start] = self.begin(t);
            covered[span.start] = true;
            for i in span.start + 1..span.end {
                tags[i] = self.inside(t);
                covered[i] = true;
            }
        }
        Ok(tags)
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(types: Vec<String>) -> Result<Self> {
        LabelSet::new(types)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.types
    }
}

/// Half-open token range `[start, end)` carrying a type label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self { start, end, label: label.into() }
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}..{})", self.label, self.start, self.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn conll() -> LabelSet {
        LabelSet::new(["PER", "ORG", "LOC", "MISC"]).unwrap()
    }

    #[test]
    fn vocabulary_layout() {
        let ls = conll();
        assert_eq!(ls.num_tags(), 9);
        assert_eq!(ls.tags()[..3], ["O", "B-PER", "I-PER"]);
        assert_eq!(ls.tag_index("I-MISC"), Some(8));
        assert_eq!(ls.kind(3), TagKind::Begin(1));
        assert_eq!(ls.kind(4), TagKind::Inside(1));
    }

    #[test]
    fn rejects_bad_type_names() {
        assert!(LabelSet::new(["PER", "PER"]).is_err());
        assert!(LabelSet::new(["B-PER"]).is_err());
        assert!(LabelSet::new([""]).is_err());
        assert!(LabelSet::new(["O"]).is_err());
    }

    #[test]
    fn bio_rules() {
        let ls = conll();
        let (b_per, i_per, i_org) = (1, 2, 4);
        assert!(ls.is_valid(&[b_per, i_per, i_per, OUTSIDE]));
        assert_eq!(ls.first_violation(&[OUTSIDE, i_per]), Some(1));
        assert_eq!(ls.first_violation(&[i_per]), Some(0));
        assert_eq!(ls.first_violation(&[b_per, i_org]), Some(1));
        assert!(ls.validate("s", &[b_per], 2).is_err());
    }

    #[test]
    fn span_decoding() {
        let ls = conll();
        let tags = ls.parse_tags("s", &["B-PER", "I-PER", "O", "B-LOC", "B-LOC"]).unwrap();
        assert_eq!(
            ls.spans(&tags),
            vec![TokenSpan::new(0, 2, "PER"), TokenSpan::new(3, 4, "LOC"), TokenSpan::new(4, 5, "LOC")]
        );
    }

    #[test]
    fn overlapping_spans_rejected() {
        let ls = conll();
        let spans = [TokenSpan::new(0, 2, "PER"), TokenSpan::new(1, 3, "ORG")];
        assert!(ls.tags_from_spans("s", 4, &spans).is_err());
    }

    fn valid_path(num_types: usize) -> impl Strategy<Value = Vec<TagId>> {
        // Sample arbitrary tags, then repair I-t that cannot continue.
        prop::collection::vec(0..2 * num_types + 1, 1..20).prop_map(move |raw| {
            let ls = LabelSet::new((0..num_types).map(|i| format!("T{i}"))).unwrap();
            let mut out: Vec<TagId> = Vec::with_capacity(raw.len());
            for tag in raw {
                let prev = out.last().copied();
                out.push(if ls.transition_allowed(prev, tag) { tag } else { tag - 1 });
            }
            out
        })
    }

    proptest! {
        #[test]
        fn bio_span_bijection(tags in valid_path(3)) {
            let ls = LabelSet::new(["T0", "T1", "T2"]).unwrap();
            prop_assert!(ls.is_valid(&tags));
            let spans = ls.spans(&tags);
            let back = ls.tags_from_spans("s", tags.len(), &spans).unwrap();
            prop_assert_eq!(&back, &tags);
            prop_assert_eq!(ls.spans(&back), spans);
        }
    }
}
