//! Text normalization for observation and solution fields.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../assets/stopwords_en.txt");

/// Cleaned token sequence of one text field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanText {
    pub tokens: Vec<String>,
    pub source_id: Option<String>,
}

impl CleanText {
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Stopword list plus stemming switch. Persisted with a fitted model so that
/// query-time cleaning matches training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub stopwords: BTreeSet<String>,
    pub stemming: bool,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            stopwords: default_stopwords(),
            stemming: true,
        }
    }
}

impl CleanConfig {
    pub fn bare() -> Self {
        CleanConfig {
            stopwords: BTreeSet::new(),
            stemming: false,
        }
    }

    pub fn clean(&self, raw: &str) -> CleanText {
        clean_text(raw, &self.stopwords, self.stemming)
    }
}

pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

/// One token per line; blank lines and `#` comments are ignored. Entries are
/// normalized the same way text tokens are.
pub fn parse_stopwords(contents: &str) -> BTreeSet<String> {
    contents
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let contents = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading stopwords {}", path.display()), e))?;
    Ok(parse_stopwords(&contents))
}

fn normalize_token(raw: &str) -> String {
    raw.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() && !c.is_uppercase())
        .collect()
}

/// Lowercase, strip punctuation, drop stopwords and optionally stem.
///
/// Tokens are Unicode-whitespace separated; every non-alphanumeric character
/// is removed and tokens left empty are dropped. A token is removed if either
/// its surface form or its stem is a stopword, which keeps the function
/// idempotent.
pub fn clean_text(raw: &str, stopwords: &BTreeSet<String>, stemming: bool) -> CleanText {
    let tokens = raw
        .split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty() && !stopwords.contains(t))
        .map(|t| if stemming { stem(&t) } else { t })
        .filter(|t| !stopwords.contains(t))
        .collect();
    CleanText {
        tokens,
        source_id: None,
    }
}

/// Light suffix stripper for plural, past and gerund forms, iterated to a
/// fixpoint so that `stem(stem(w)) == stem(w)`.
pub fn stem(word: &str) -> String {
    let mut current = word.to_string();
    while let Some(next) = stem_step(&current) {
        debug_assert!(next.len() < current.len());
        current = next;
    }
    current
}

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y'))
}

fn stem_step(w: &str) -> Option<String> {
    let n = w.chars().count();
    if n <= 3 || !w.is_ascii() {
        return None;
    }
    if let Some(base) = w.strip_suffix("sses") {
        return Some(format!("{base}ss"));
    }
    if let Some(base) = w.strip_suffix("ies") {
        if base.len() >= 2 {
            return Some(format!("{base}y"));
        }
    }
    for suffix in ["ing", "ed"] {
        if let Some(base) = w.strip_suffix(suffix) {
            if base.len() >= 3 && has_vowel(base) {
                return Some(undouble(base));
            }
        }
    }
    if w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is") {
        return Some(w[..w.len() - 1].to_string());
    }
    None
}

// "stopped" -> "stopp" -> "stop"; l, s and z doubles are kept ("filled").
fn undouble(base: &str) -> String {
    let b = base.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] {
        let c = b[n - 1];
        if c.is_ascii_alphabetic() && !matches!(c, b'a' | b'e' | b'i' | b'o' | b'u' | b'l' | b's' | b'z') {
            return base[..n - 1].to_string();
        }
    }
    base.to_string()
}
