//! Malware type and target platform tagging by keyword stems, and the
//! type × platform count matrix.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::{normalize_chars, stem, TokenizedRepo};

pub const DEFAULT_TAXONOMY: &str = include_str!("../data/taxonomy.json");
pub const TYPE_COUNT: usize = 13;
pub const PLATFORM_COUNT: usize = 6;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("taxonomy must define exactly {expected} {what}, found {found}")]
    Count { what: &'static str, expected: usize, found: usize },
    #[error("category `{0}` has no usable keyword")]
    EmptyCategory(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Category {
    name: String,
    keywords: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaxonomyFile {
    types: Vec<Category>,
    platforms: Vec<Category>,
    #[serde(default)]
    negative: Vec<String>,
}

/// Keyword stems for the 13 malware types and 6 target platforms.
#[derive(Debug, Clone)]
pub struct TagLexicon {
    types: Vec<String>,
    platforms: Vec<String>,
    type_stems: HashMap<String, Vec<usize>>,
    platform_stems: HashMap<String, Vec<usize>>,
    negative: HashSet<String>,
}

fn keyword_stem(word: &str) -> Option<String> {
    let norm = normalize_chars(word);
    let token = norm.split_whitespace().next()?.trim_matches(['-', '_']);
    (!token.is_empty()).then(|| stem(token))
}

fn index_categories(cats: &[Category]) -> Result<HashMap<String, Vec<usize>>, TaxonomyError> {
    let mut map: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, cat) in cats.iter().enumerate() {
        let mut any = false;
        for kw in cat.keywords.iter().chain(std::iter::once(&cat.name)) {
            if let Some(s) = keyword_stem(kw) {
                let entry = map.entry(s).or_default();
                if !entry.contains(&i) {
                    entry.push(i);
                }
                any = true;
            }
        }
        if !any {
            return Err(TaxonomyError::EmptyCategory(cat.name.clone()));
        }
    }
    Ok(map)
}

impl Default for TagLexicon {
    fn default() -> Self {
        Self::from_json(DEFAULT_TAXONOMY).expect("built-in taxonomy is valid")
    }
}

impl TagLexicon {
    /// Parses `taxonomy.json`; keywords are stemmed with the text pipeline's stemmer.
    pub fn from_json(json: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile = serde_json::from_str(json)?;
        if file.types.len() != TYPE_COUNT {
            return Err(TaxonomyError::Count { what: "types", expected: TYPE_COUNT, found: file.types.len() });
        }
        if file.platforms.len() != PLATFORM_COUNT {
            return Err(TaxonomyError::Count {
                what: "platforms",
                expected: PLATFORM_COUNT,
                found: file.platforms.len(),
            });
        }
        Ok(Self {
            types: file.types.iter().map(|c| c.name.clone()).collect(),
            platforms: file.platforms.iter().map(|c| c.name.clone()).collect(),
            type_stems: index_categories(&file.types)?,
            platform_stems: index_categories(&file.platforms)?,
            negative: file.negative.iter().filter_map(|w| keyword_stem(w)).collect(),
        })
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn platforms(&self) -> &[String] {
        &self.platforms
    }

    /// Candidate stems of a token: the token itself plus its `-`/`_` parts.
    /// Tokens equal to a negative stem yield nothing.
    fn candidates<'a>(&self, token: &'a str) -> Vec<&'a str> {
        if self.negative.contains(token) {
            return Vec::new();
        }
        let mut out = vec![token];
        if token.contains(['-', '_']) {
            out.extend(token.split(['-', '_']).filter(|p| !p.is_empty()));
        }
        out
    }

    pub fn tag_repository(&self, repo_name: &str, repo: &TokenizedRepo) -> TagAssignment {
        let mut types = BTreeSet::new();
        let mut platforms = BTreeSet::new();
        for (_, tokens) in repo.iter() {
            for token in tokens {
                for cand in self.candidates(token) {
                    if let Some(ids) = self.type_stems.get(cand) {
                        types.extend(ids.iter().map(|&i| self.types[i].clone()));
                    }
                    if let Some(ids) = self.platform_stems.get(cand) {
                        platforms.extend(ids.iter().map(|&i| self.platforms[i].clone()));
                    }
                }
            }
        }
        TagAssignment { repo_name: repo_name.to_string(), types, platforms }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagAssignment {
    pub repo_name: String,
    pub types: BTreeSet<String>,
    pub platforms: BTreeSet<String>,
}

/// `numerator / denominator`, kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: u64,
    pub denominator: u64,
}

impl Fraction {
    pub fn value(&self) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            self.numerator as f64 / self.denominator as f64
        }
    }
}

/// Type × platform counts. Totals are sums of cells, so a repository tagged
/// with two platforms contributes to two cells of its row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyMatrix {
    pub types: Vec<String>,
    pub platforms: Vec<String>,
    /// `cells[type][platform]`
    pub cells: Vec<Vec<u64>>,
    pub type_totals: Vec<u64>,
    pub platform_totals: Vec<u64>,
    pub grand_total: u64,
    /// distinct repositories carrying each type / platform tag
    pub repos_per_type: Vec<u64>,
    pub repos_per_platform: Vec<u64>,
    pub repositories: u64,
    pub multi_platform: Fraction,
    pub multi_type: Fraction,
}

impl TaxonomyMatrix {
    pub fn cell(&self, ty: &str, platform: &str) -> Option<u64> {
        let t = self.types.iter().position(|x| x == ty)?;
        let p = self.platforms.iter().position(|x| x == platform)?;
        Some(self.cells[t][p])
    }
}

pub fn build_matrix(lexicon: &TagLexicon, assignments: &[TagAssignment]) -> TaxonomyMatrix {
    let (nt, np) = (lexicon.types.len(), lexicon.platforms.len());
    let type_pos: HashMap<&str, usize> = lexicon.types.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let plat_pos: HashMap<&str, usize> =
        lexicon.platforms.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut cells = vec![vec![0u64; np]; nt];
    let mut repos_per_type = vec![0u64; nt];
    let mut repos_per_platform = vec![0u64; np];
    let (mut multi_platform, mut multi_type) = (0, 0);
    for a in assignments {
        let ts: Vec<usize> = a.types.iter().filter_map(|t| type_pos.get(t.as_str()).copied()).collect();
        let ps: Vec<usize> = a.platforms.iter().filter_map(|p| plat_pos.get(p.as_str()).copied()).collect();
        for &t in &ts {
            repos_per_type[t] += 1;
            for &p in &ps {
                cells[t][p] += 1;
            }
        }
        for &p in &ps {
            repos_per_platform[p] += 1;
        }
        multi_platform += u64::from(ps.len() > 1);
        multi_type += u64::from(ts.len() > 1);
    }
    let type_totals: Vec<u64> = cells.iter().map(|row| row.iter().sum()).collect();
    let platform_totals: Vec<u64> = (0..np).map(|p| cells.iter().map(|row| row[p]).sum()).collect();
    let n = assignments.len() as u64;
    TaxonomyMatrix {
        types: lexicon.types.clone(),
        platforms: lexicon.platforms.clone(),
        grand_total: type_totals.iter().sum(),
        cells,
        type_totals,
        platform_totals,
        repos_per_type,
        repos_per_platform,
        repositories: n,
        multi_platform: Fraction { numerator: multi_platform, denominator: n },
        multi_type: Fraction { numerator: multi_type, denominator: n },
    }
}
