//! Text-level keyphrase types: tokens, stems, documents and phrase sets.
//!
//! Tokenization is NFC-normalize, lowercase, then take maximal runs of
//! alphanumeric characters. Everything else (whitespace, punctuation,
//! symbols) separates tokens and is dropped. Digits are kept.

mod stem;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub use stem::stem;

/// A single lowercased, whitespace-free word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    /// Builds a token from an already-normalized word. Returns `None` for
    /// empty input or input containing whitespace.
    pub fn new(surface: &str) -> Option<Self> {
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return None;
        }
        Some(Token(surface.to_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn stem(&self) -> Token {
        Token(stem(&self.0))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| Token(s.to_string()))
        .collect()
}

pub fn porter_stem(token: &Token) -> Token {
    token.stem()
}

/// A non-empty token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Keyphrase {
    tokens: Vec<Token>,
}

impl Keyphrase {
    pub fn new(tokens: Vec<Token>) -> Option<Self> {
        if tokens.is_empty() {
            None
        } else {
            Some(Keyphrase { tokens })
        }
    }

    /// Tokenizes `text`; `None` when nothing survives tokenization.
    pub fn parse(text: &str) -> Option<Self> {
        Self::new(tokenize(text))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn stemmed(&self) -> Vec<Token> {
        self.tokens.iter().map(Token::stem).collect()
    }
}

impl fmt::Display for Keyphrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.as_str())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    raw: String,
    tokens: Vec<Token>,
}

impl Document {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        Document { raw, tokens }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn stemmed(&self) -> Vec<Token> {
        self.tokens.iter().map(Token::stem).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Gold,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyphraseSet {
    pub phrases: Vec<Keyphrase>,
    pub kind: SetKind,
}

impl KeyphraseSet {
    pub fn new(phrases: Vec<Keyphrase>, kind: SetKind) -> Self {
        KeyphraseSet { phrases, kind }
    }

    /// Parses phrase strings, silently skipping ones that tokenize to nothing.
    pub fn from_strings<S: AsRef<str>>(texts: &[S], kind: SetKind) -> Self {
        let phrases = texts
            .iter()
            .filter_map(|t| Keyphrase::parse(t.as_ref()))
            .collect();
        KeyphraseSet { phrases, kind }
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Keyphrase> {
        self.phrases.iter()
    }
}

/// Keeps the first phrase of every distinct stemmed token sequence.
pub fn dedup_stemmed(set: &KeyphraseSet) -> KeyphraseSet {
    let mut seen = HashSet::new();
    let phrases = set
        .phrases
        .iter()
        .filter(|p| seen.insert(p.stemmed()))
        .cloned()
        .collect();
    KeyphraseSet::new(phrases, set.kind)
}

/// True when `needle` occurs as a contiguous run inside `haystack`.
pub(crate) fn contains_run(haystack: &[Token], needle: &[Token]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Partitions `phrases` into those whose stemmed tokens occur contiguously in
/// the stemmed document and those that do not. Order is preserved in both.
pub fn split_present_absent(
    doc: &Document,
    phrases: &KeyphraseSet,
) -> (KeyphraseSet, KeyphraseSet) {
    let doc_stems = doc.stemmed();
    let (present, absent): (Vec<_>, Vec<_>) = phrases
        .phrases
        .iter()
        .cloned()
        .partition(|p| contains_run(&doc_stems, &p.stemmed()));
    (
        KeyphraseSet::new(present, phrases.kind),
        KeyphraseSet::new(absent, phrases.kind),
    )
}

/// Same split as [`split_present_absent`] but reporting indices into the input.
pub fn present_mask(doc: &Document, phrases: &[Keyphrase]) -> Vec<bool> {
    let doc_stems = doc.stemmed();
    phrases
        .iter()
        .map(|p| contains_run(&doc_stems, &p.stemmed()))
        .collect()
}
