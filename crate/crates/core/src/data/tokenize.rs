//! Raw-text tokenization with character offsets, and the language hook.

/// A token with its `[start, end)` character offsets in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits on whitespace and isolates punctuation: a maximal run of letters,
/// digits and underscores is one token, every other non-space character is a
/// token of its own. Offsets count Unicode scalar values, not bytes.
pub fn tokenize(text: &str) -> Vec<RawToken> {
    let mut tokens = Vec::new();
    let mut current: Option<RawToken> = None;
    for (i, c) in text.chars().enumerate() {
        if is_word_char(c) {
            match &mut current {
                Some(tok) => {
                    tok.text.push(c);
                    tok.end = i + 1;
                }
                None => current = Some(RawToken { text: c.to_string(), start: i, end: i + 1 }),
            }
            continue;
        }
        tokens.extend(current.take());
        if !c.is_whitespace() {
            tokens.push(RawToken { text: c.to_string(), start: i, end: i + 1 });
        }
    }
    tokens.extend(current);
    tokens
}

/// Offsets of `tokens` when laid out with single spaces between them.
pub fn joined_offsets(tokens: &[String]) -> Vec<(usize, usize)> {
    let mut pos = 0;
    tokens
        .iter()
        .map(|t| {
            let start = pos;
            let end = start + t.chars().count();
            pos = end + 1;
            (start, end)
        })
        .collect()
}

/// Locates each token in `text` in order, returning character offsets, or
/// the index of the first token that cannot be found.
pub fn align_tokens(text: &str, tokens: &[String]) -> Result<Vec<(usize, usize)>, usize> {
    let chars: Vec<char> = text.chars().collect();
    let mut cursor = 0;
    let mut offsets = Vec::with_capacity(tokens.len());
    for (i, token) in tokens.iter().enumerate() {
        let needle: Vec<char> = token.chars().collect();
        let found = (cursor..=chars.len().saturating_sub(needle.len()))
            .find(|&s| chars[s..s + needle.len()] == needle[..])
            .ok_or(i)?;
        offsets.push((found, found + needle.len()));
        cursor = found + needle.len();
    }
    Ok(offsets)
}

/// Assigns a language code to raw text. The default implementation returns
/// the project's configured language; integrators can plug in a detector.
pub trait LanguageDetector: Send + Sync {
    fn detect(&self, text: &str) -> Option<String>;
}

#[derive(Debug, Clone, Default)]
pub struct ConfiguredLanguage(pub Option<String>);

impl LanguageDetector for ConfiguredLanguage {
    fn detect(&self, _text: &str) -> Option<String> {
        self.0.clone()
    }
}
