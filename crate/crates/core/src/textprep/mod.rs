//! Text normalization applied to each repository field before vectorizing.
//!
//! Processing runs in three stages: entity stripping (numbers, URLs, emails),
//! character cleanup, then word-level filtering (stopwords, stemming and, for
//! file names, a blacklist of boilerplate names).

mod porter;

use std::collections::HashSet;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::record::RepositoryRecord;

pub use porter::porter_stem;

pub const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");
pub const DEFAULT_FILENAME_BLACKLIST: &str = include_str!("../../data/filename_blacklist.txt");

/// The five text fields fed to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Title,
    Description,
    Topics,
    Readme,
    FileNames,
}

impl FieldKind {
    /// Slot layout order used by feature vectors.
    pub const LAYOUT: [FieldKind; 5] = [
        FieldKind::Title,
        FieldKind::Topics,
        FieldKind::Description,
        FieldKind::FileNames,
        FieldKind::Readme,
    ];

    pub fn layout_index(self) -> usize {
        match self {
            FieldKind::Title => 0,
            FieldKind::Topics => 1,
            FieldKind::Description => 2,
            FieldKind::FileNames => 3,
            FieldKind::Readme => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Title => "title",
            FieldKind::Description => "description",
            FieldKind::Topics => "topics",
            FieldKind::Readme => "readme",
            FieldKind::FileNames => "file_names",
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FieldKind::LAYOUT
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown field `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedField {
    pub kind: FieldKind,
    pub tokens: Vec<String>,
}

/// All five tokenized fields of one repository, stored in layout order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedRepo {
    fields: [Vec<String>; 5],
}

impl TokenizedRepo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fields(fields: impl IntoIterator<Item = TokenizedField>) -> Self {
        let mut repo = Self::default();
        for f in fields {
            repo.fields[f.kind.layout_index()] = f.tokens;
        }
        repo
    }

    pub fn tokens(&self, kind: FieldKind) -> &[String] {
        &self.fields[kind.layout_index()]
    }

    pub fn set(&mut self, kind: FieldKind, tokens: Vec<String>) {
        self.fields[kind.layout_index()] = tokens;
    }

    pub fn iter(&self) -> impl Iterator<Item = (FieldKind, &[String])> {
        FieldKind::LAYOUT.into_iter().map(move |k| (k, self.tokens(k)))
    }
}

/// Character-level cleanup: lowercases ASCII letters, keeps digits, `_` and
/// `-`, and replaces every other ASCII character (punctuation, currency,
/// control, whitespace) with a single space. Non-ASCII letters and digits are
/// dropped; other non-ASCII characters become a space.
pub fn normalize_chars(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
            out.push(c.to_ascii_lowercase());
        } else if c.is_ascii() || !c.is_alphanumeric() {
            out.push(' ');
        }
    }
    out
}

/// [`normalize_chars`] over raw bytes; malformed UTF-8 sequences are dropped.
pub fn normalize_bytes(raw: &[u8]) -> String {
    let valid: String = raw.utf8_chunks().map(|chunk| chunk.valid()).collect();
    normalize_chars(&valid)
}

fn is_url(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    let trimmed = lower.trim_start_matches(|c: char| !c.is_ascii_alphanumeric());
    lower.contains("://") || trimmed.starts_with("www.")
}

fn is_email(token: &str) -> bool {
    let t = token.trim_matches(|c: char| !c.is_alphanumeric());
    let Some((local, domain)) = t.split_once('@') else {
        return false;
    };
    !local.is_empty()
        && !domain.contains('@')
        && domain
            .rsplit_once('.')
            .is_some_and(|(host, tld)| !host.is_empty() && !tld.is_empty())
}

/// Entity-level filtering over whitespace-separated tokens.
///
/// URLs and emails are removed, purely numeric tokens are removed, and mixed
/// alphanumeric tokens lose their digits; the residue survives only if it
/// still holds at least two letters (`win32` → `win`, `v2` → removed).
pub fn strip_entities(text: &str) -> String {
    let mut kept: Vec<String> = Vec::new();
    for token in text.split_whitespace() {
        if is_url(token) || is_email(token) {
            continue;
        }
        let digits = token.chars().filter(|c| c.is_ascii_digit()).count();
        if digits == 0 {
            kept.push(token.to_string());
            continue;
        }
        let residue: String = token.chars().filter(|c| !c.is_ascii_digit()).collect();
        if residue.chars().filter(|c| c.is_alphanumeric()).count() >= 2 {
            kept.push(residue);
        }
    }
    kept.join(" ")
}

/// Porter stemming iterated to a fixed point, applied separately to each
/// `-`/`_`-separated part of a compound token.
pub fn stem(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    let mut part = String::new();
    for c in token.chars() {
        if c == '-' || c == '_' {
            out.push_str(&stem_word(&part));
            out.push(c);
            part.clear();
        } else {
            part.push(c);
        }
    }
    out.push_str(&stem_word(&part));
    out
}

fn stem_word(word: &str) -> String {
    let mut current = word.to_string();
    for _ in 0..8 {
        let next = porter_stem(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Word-level filter configuration: stopwords and the file-name blacklist.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    stopwords: HashSet<String>,
    blacklist: HashSet<String>,
}

fn parse_word_list(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_ascii_lowercase())
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::from_lists(DEFAULT_STOPWORDS, DEFAULT_FILENAME_BLACKLIST)
    }
}

impl Preprocessor {
    /// Builds a preprocessor from one-entry-per-line word lists.
    pub fn from_lists(stopwords: &str, blacklist: &str) -> Self {
        let stopwords: HashSet<String> = parse_word_list(stopwords).collect();
        let mut black: HashSet<String> = HashSet::new();
        for word in parse_word_list(blacklist) {
            // Both the raw and the stemmed form, so the check holds either side of stemming.
            black.insert(stem(&word));
            black.insert(word);
        }
        Self { stopwords, blacklist: black }
    }

    /// Loads overrides from `dir/stopwords.txt` and `dir/filename_blacklist.txt`,
    /// falling back to the built-in list for a missing file.
    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let read = |name: &str, fallback: &str| -> io::Result<String> {
            match std::fs::read_to_string(dir.join(name)) {
                Ok(s) => Ok(s),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(fallback.to_string()),
                Err(e) => Err(e),
            }
        };
        Ok(Self::from_lists(
            &read("stopwords.txt", DEFAULT_STOPWORDS)?,
            &read("filename_blacklist.txt", DEFAULT_FILENAME_BLACKLIST)?,
        ))
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn is_blacklisted(&self, token: &str) -> bool {
        self.blacklist.contains(token)
    }

    /// Splits normalized text into tokens, drops stopwords and stems the rest.
    /// For file names the blacklist applies and `-`/`_` also split tokens;
    /// topic tags are split on `-`.
    pub fn tokenize_and_filter(&self, text: &str, kind: FieldKind) -> TokenizedField {
        let splitters: &[char] = match kind {
            FieldKind::Topics => &['-'],
            FieldKind::FileNames => &['-', '_'],
            _ => &[],
        };
        let mut tokens = Vec::new();
        for raw in text.split_whitespace().flat_map(|t| t.split(splitters)) {
            let token = raw.trim_matches(['-', '_']);
            if !token.chars().any(|c| c.is_ascii_alphanumeric()) || self.is_stopword(token) {
                continue;
            }
            let file_names = kind == FieldKind::FileNames;
            if file_names && self.is_blacklisted(token) {
                continue;
            }
            let stemmed = stem(token);
            if self.is_stopword(&stemmed) || (file_names && self.is_blacklisted(&stemmed)) {
                continue;
            }
            tokens.push(stemmed);
        }
        TokenizedField { kind, tokens }
    }

    /// Full pipeline for one field of raw text.
    pub fn process(&self, raw: &str, kind: FieldKind) -> TokenizedField {
        let text = normalize_chars(&strip_entities(raw));
        self.tokenize_and_filter(&text, kind)
    }

    pub fn process_record(&self, record: &RepositoryRecord) -> TokenizedRepo {
        let mut repo = TokenizedRepo::new();
        repo.set(FieldKind::Title, self.process(&record.title, FieldKind::Title).tokens);
        repo.set(
            FieldKind::Description,
            self.process(&record.description, FieldKind::Description).tokens,
        );
        repo.set(FieldKind::Topics, self.process(&record.topics.join(" "), FieldKind::Topics).tokens);
        repo.set(FieldKind::Readme, self.process(&record.readme, FieldKind::Readme).tokens);
        repo.set(
            FieldKind::FileNames,
            self.process(&record.file_paths.join(" "), FieldKind::FileNames).tokens,
        );
        repo
    }
}
