use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::TagId;

/// A tokenized sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    /// Character spans `[start, end)` of each token in the source text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_offsets: Option<Vec<(usize, usize)>>,
}

impl Sentence {
    pub fn new<I, S>(id: impl Into<String>, tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sentence = Self {
            id: id.into(),
            tokens: tokens.into_iter().map(Into::into).collect(),
            language: None,
            source_offsets: None,
        };
        sentence.validate()?;
        Ok(sentence)
    }

    pub fn with_offsets(mut self, offsets: Vec<(usize, usize)>) -> Result<Self> {
        self.source_offsets = Some(offsets);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::data(&self.id, "sentence has no tokens"));
        }
        if let Some(pos) = self.tokens.iter().position(String::is_empty) {
            return Err(Error::data(&self.id, format!("token {pos} is empty")));
        }
        if let Some(offsets) = &self.source_offsets {
            if offsets.len() != self.tokens.len() {
                return Err(Error::data(&self.id, "offset count differs from token count"));
            }
            let mut last_end = 0;
            for (i, &(s, e)) in offsets.iter().enumerate() {
                if s >= e || s < last_end {
                    return Err(Error::data(
                        &self.id,
                        format!("token {i} offsets [{s}, {e}) are empty, overlapping or out of order"),
                    ));
                }
                last_end = e;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A tag path over a sentence, as indices into a label set's vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagSequence(pub Vec<TagId>);

impl TagSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[TagId] {
        &self.0
    }
}

impl From<Vec<TagId>> for TagSequence {
    fn from(tags: Vec<TagId>) -> Self {
        Self(tags)
    }
}

/// Stable sentence id: file position plus a short content hash of the tokens.
pub fn content_id(index: usize, tokens: &[String]) -> String {
    let digest = crate::checksum::sha256_hex(tokens.join("\u{1f}").as_bytes());
    format!("s{index:06}-{}", &digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_inputs() {
        assert!(Sentence::new("a", Vec::<String>::new()).is_err());
        assert!(Sentence::new("a", ["x", ""]).is_err());
    }

    #[test]
    fn offsets_must_increase() {
        let s = Sentence::new("a", ["ab", "cd"]).unwrap();
        assert!(s.clone().with_offsets(vec![(0, 2), (3, 5)]).is_ok());
        assert!(s.clone().with_offsets(vec![(0, 2), (1, 5)]).is_err());
        assert!(s.with_offsets(vec![(0, 2)]).is_err());
    }

    #[test]
    fn content_ids_sort_in_file_order() {
        let toks = |w: &str| vec![w.to_string()];
        let a = content_id(9, &toks("z"));
        let b = content_id(10, &toks("a"));
        assert!(a < b);
        assert_eq!(content_id(3, &toks("q")), content_id(3, &toks("q")));
    }
}
