//! Bag-of-words features: chi-square vocabulary selection per field and
//! fixed-width concatenated vectors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::record::Class;
use crate::scalar::Scalar;
use crate::textprep::{FieldKind, TokenizedRepo};

#[derive(Debug, Error, PartialEq)]
pub enum FeaturizeError {
    #[error("degenerate corpus: no {0} examples")]
    DegenerateCorpus(Class),
    #[error("budgets must name each of the five fields exactly once")]
    BudgetMismatch,
}

/// How a vocabulary slot is filled from a field's tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingMode {
    Presence,
    #[default]
    Count,
    Tfidf,
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingMode::Presence => "presence",
            WeightingMode::Count => "count",
            WeightingMode::Tfidf => "tfidf",
        })
    }
}

impl FromStr for WeightingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "presence" => Ok(WeightingMode::Presence),
            "count" => Ok(WeightingMode::Count),
            "tfidf" | "tf-idf" => Ok(WeightingMode::Tfidf),
            other => Err(format!("unknown weighting mode `{other}`")),
        }
    }
}

/// Number of top-scoring words kept for one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldBudget {
    pub kind: FieldKind,
    pub k: usize,
}

/// Title 30, topics 10, description 400, file names 100, README 10: 550 slots.
pub fn default_budgets() -> [FieldBudget; 5] {
    [
        FieldBudget { kind: FieldKind::Title, k: 30 },
        FieldBudget { kind: FieldKind::Topics, k: 10 },
        FieldBudget { kind: FieldKind::Description, k: 400 },
        FieldBudget { kind: FieldKind::FileNames, k: 100 },
        FieldBudget { kind: FieldKind::Readme, k: 10 },
    ]
}

/// Document-level 2×2 presence table for one word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Contingency {
    /// malware documents containing the word
    pub a: u64,
    /// benign documents containing the word
    pub b: u64,
    /// malware documents lacking the word
    pub c: u64,
    /// benign documents lacking the word
    pub d: u64,
}

impl Contingency {
    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// Chi-square statistic `N(AD − BC)² / ((A+B)(C+D)(A+C)(B+D))`, zero when any
    /// marginal is zero. Generic over any numeric field so exact rationals work too.
    pub fn chi_square<T>(&self) -> T
    where
        T: Num + FromPrimitive + Clone,
    {
        let Contingency { a, b, c, d } = *self;
        let marginals = [a + b, c + d, a + c, b + d];
        if marginals.contains(&0) {
            return T::zero();
        }
        let t = |x: u64| T::from_u64(x).expect("count representable");
        let diff = t(a * d) - t(b * c);
        let denom = marginals.into_iter().fold(T::one(), |acc, m| acc * t(m));
        t(self.total()) * diff.clone() * diff / denom
    }
}

fn class_totals(labeled: &[(TokenizedRepo, Class)]) -> Result<(u64, u64), FeaturizeError> {
    let malware = labeled.iter().filter(|(_, c)| *c == Class::Malware).count() as u64;
    let benign = labeled.len() as u64 - malware;
    if malware == 0 {
        return Err(FeaturizeError::DegenerateCorpus(Class::Malware));
    }
    if benign == 0 {
        return Err(FeaturizeError::DegenerateCorpus(Class::Benign));
    }
    Ok((malware, benign))
}

/// Presence table of `word` within field `kind` over a labeled corpus.
pub fn contingency(
    word: &str,
    kind: FieldKind,
    labeled: &[(TokenizedRepo, Class)],
) -> Result<Contingency, FeaturizeError> {
    let (malware, benign) = class_totals(labeled)?;
    let mut table = Contingency { c: malware, d: benign, ..Default::default() };
    for (repo, class) in labeled {
        if repo.tokens(kind).iter().any(|t| t == word) {
            match class {
                Class::Malware => {
                    table.a += 1;
                    table.c -= 1;
                }
                Class::Benign => {
                    table.b += 1;
                    table.d -= 1;
                }
            }
        }
    }
    Ok(table)
}

/// Chi-square score of `word` in field `kind`.
pub fn chi_square<T: Scalar>(
    word: &str,
    kind: FieldKind,
    labeled: &[(TokenizedRepo, Class)],
) -> Result<T, FeaturizeError> {
    Ok(contingency(word, kind, labeled)?.chi_square())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredWord<T> {
    pub word: String,
    pub score: T,
    /// training documents whose field contains the word
    pub df: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldVocabulary<T> {
    pub kind: FieldKind,
    pub budget: usize,
    pub words: Vec<ScoredWord<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct VocabularyFile<T> {
    mode: WeightingMode,
    n_train: u64,
    fields: Vec<FieldVocabulary<T>>,
}

/// Selected words for all five fields, in slot layout order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "VocabularyFile<T>", into = "VocabularyFile<T>")]
pub struct Vocabulary<T: Scalar> {
    mode: WeightingMode,
    n_train: u64,
    fields: Vec<FieldVocabulary<T>>,
    offsets: Vec<usize>,
    index: Vec<HashMap<String, usize>>,
}

impl<T: Scalar> TryFrom<VocabularyFile<T>> for Vocabulary<T> {
    type Error = String;

    fn try_from(file: VocabularyFile<T>) -> Result<Self, Self::Error> {
        let kinds: Vec<FieldKind> = file.fields.iter().map(|f| f.kind).collect();
        if kinds != FieldKind::LAYOUT {
            return Err("vocabulary fields must appear once each, in layout order".into());
        }
        for f in &file.fields {
            if f.words.len() > f.budget {
                return Err(format!("field {} holds more words than its budget", f.kind));
            }
            let distinct: HashSet<&str> = f.words.iter().map(|w| w.word.as_str()).collect();
            if distinct.len() != f.words.len() {
                return Err(format!("field {} repeats a word", f.kind));
            }
        }
        Ok(Self::assemble(file.mode, file.n_train, file.fields))
    }
}

impl<T: Scalar> From<Vocabulary<T>> for VocabularyFile<T> {
    fn from(v: Vocabulary<T>) -> Self {
        VocabularyFile { mode: v.mode, n_train: v.n_train, fields: v.fields }
    }
}

fn check_budgets(budgets: &[FieldBudget]) -> Result<BTreeMap<FieldKind, usize>, FeaturizeError> {
    let mut map = BTreeMap::new();
    for b in budgets {
        if map.insert(b.kind, b.k).is_some() {
            return Err(FeaturizeError::BudgetMismatch);
        }
    }
    if map.len() != FieldKind::LAYOUT.len() {
        return Err(FeaturizeError::BudgetMismatch);
    }
    Ok(map)
}

/// Picks the `k` highest chi-square words of every field. Ties are broken by
/// the lexicographically smaller word.
pub fn select_vocabulary<T: Scalar>(
    labeled: &[(TokenizedRepo, Class)],
    budgets: &[FieldBudget],
    mode: WeightingMode,
) -> Result<Vocabulary<T>, FeaturizeError> {
    let budgets = check_budgets(budgets)?;
    let (malware, benign) = class_totals(labeled)?;
    let mut fields = Vec::with_capacity(5);
    for kind in FieldKind::LAYOUT {
        // word -> (malware docs, benign docs)
        let mut presence: HashMap<&str, (u64, u64)> = HashMap::new();
        for (repo, class) in labeled {
            let distinct: HashSet<&str> = repo.tokens(kind).iter().map(String::as_str).collect();
            for w in distinct {
                let e = presence.entry(w).or_default();
                match class {
                    Class::Malware => e.0 += 1,
                    Class::Benign => e.1 += 1,
                }
            }
        }
        let mut scored: Vec<ScoredWord<T>> = presence
            .into_iter()
            .map(|(word, (a, b))| {
                let table = Contingency { a, b, c: malware - a, d: benign - b };
                ScoredWord { word: word.to_string(), score: table.chi_square(), df: a + b }
            })
            .collect();
        scored.sort_by(|x, y| {
            y.score
                .partial_cmp(&x.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| x.word.cmp(&y.word))
        });
        let budget = budgets[&kind];
        scored.truncate(budget);
        fields.push(FieldVocabulary { kind, budget, words: scored });
    }
    Ok(Vocabulary::assemble(mode, labeled.len() as u64, fields))
}

impl<T: Scalar> Vocabulary<T> {
    fn assemble(mode: WeightingMode, n_train: u64, fields: Vec<FieldVocabulary<T>>) -> Self {
        let mut offsets = Vec::with_capacity(fields.len());
        let mut at = 0;
        for f in &fields {
            offsets.push(at);
            at += f.budget;
        }
        let index = fields
            .iter()
            .map(|f| f.words.iter().enumerate().map(|(i, w)| (w.word.clone(), i)).collect())
            .collect();
        Self { mode, n_train, fields, offsets, index }
    }

    pub fn mode(&self) -> WeightingMode {
        self.mode
    }

    pub fn n_train(&self) -> u64 {
        self.n_train
    }

    /// Vector width: the sum of all field budgets, independent of how many
    /// words each field actually selected.
    pub fn width(&self) -> usize {
        self.fields.iter().map(|f| f.budget).sum()
    }

    /// Number of words actually selected.
    pub fn selected(&self) -> usize {
        self.fields.iter().map(|f| f.words.len()).sum()
    }

    pub fn field(&self, kind: FieldKind) -> &FieldVocabulary<T> {
        &self.fields[kind.layout_index()]
    }

    pub fn fields(&self) -> &[FieldVocabulary<T>] {
        &self.fields
    }

    /// First slot of `kind` in the concatenated vector.
    pub fn offset(&self, kind: FieldKind) -> usize {
        self.offsets[kind.layout_index()]
    }

    pub fn slot(&self, kind: FieldKind, word: &str) -> Option<usize> {
        self.index[kind.layout_index()].get(word).map(|i| self.offset(kind) + i)
    }

    /// Same vocabulary with another weighting mode.
    pub fn with_mode(mut self, mode: WeightingMode) -> Self {
        self.mode = mode;
        self
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocabulary serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn idf(&self, df: u64) -> T {
        if df == 0 || self.n_train == 0 {
            return T::zero();
        }
        (T::from_u64(self.n_train).unwrap_or_else(T::infinity) / T::from_u64(df).unwrap_or_else(T::one)).ln()
    }

    /// Fixed-width vector for one repository. Out-of-vocabulary tokens are ignored.
    pub fn vectorize(&self, repo_name: &str, repo: &TokenizedRepo) -> FeatureVector<T> {
        let mut values = vec![T::zero(); self.width()];
        for (kind, tokens) in repo.iter() {
            for token in tokens {
                if let Some(slot) = self.slot(kind, token) {
                    values[slot] = values[slot] + T::one();
                }
            }
            match self.mode {
                WeightingMode::Count => {}
                WeightingMode::Presence => {
                    let start = self.offset(kind);
                    for v in &mut values[start..start + self.field(kind).budget] {
                        *v = v.min(T::one());
                    }
                }
                WeightingMode::Tfidf => {
                    let start = self.offset(kind);
                    for (i, w) in self.field(kind).words.iter().enumerate() {
                        let v = &mut values[start + i];
                        *v = *v * self.idf(w.df);
                    }
                }
            }
        }
        FeatureVector { repo_name: repo_name.to_string(), values }
    }
}

/// Concatenated per-field slot values of one repository.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<T> {
    pub repo_name: String,
    pub values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn width(&self) -> usize {
        self.values.len()
    }
}
