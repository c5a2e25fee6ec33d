use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use repomine::featurize::{FieldBudget, WeightingMode};
use repomine::srcdetect::{SourceDetectConfig, DEFAULT_EXTENSIONS, DEFAULT_THRESHOLD};
use repomine::taxonomy::{TagLexicon, DEFAULT_TAXONOMY};
use repomine::textprep::{FieldKind, Preprocessor, DEFAULT_FILENAME_BLACKLIST, DEFAULT_STOPWORDS};
use repomine::QueryTier;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budgets {
    pub title: usize,
    pub topics: usize,
    pub description: usize,
    pub file_names: usize,
    pub readme: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self { title: 30, topics: 10, description: 400, file_names: 100, readme: 10 }
    }
}

impl Budgets {
    pub fn to_field_budgets(self) -> Vec<FieldBudget> {
        let k = [self.title, self.topics, self.description, self.file_names, self.readme];
        FieldKind::LAYOUT.iter().zip(k).map(|(&kind, k)| FieldBudget { kind, k }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory holding q1.txt, q50.txt and q137.txt.
    pub keywords: PathBuf,
    /// Optional directory overriding stopwords.txt, filename_blacklist.txt
    /// and taxonomy.json.
    pub data: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self { keywords: PathBuf::from("keywords"), data: None }
    }
}

/// Every knob of a run. Loaded from defaults, then `--config`, then flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tier: QueryTier,
    pub budgets: Budgets,
    pub weighting: WeightingMode,
    pub alpha: f64,
    pub folds: usize,
    pub seed: Option<u64>,
    pub threshold: f64,
    pub extensions: Vec<String>,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tier: QueryTier::Q137,
            budgets: Budgets::default(),
            weighting: WeightingMode::Count,
            alpha: 1.0,
            folds: 10,
            seed: None,
            threshold: DEFAULT_THRESHOLD,
            extensions: DEFAULT_EXTENSIONS.iter().map(|s| s.to_string()).collect(),
            paths: Paths::default(),
        }
    }
}

/// Text resources the pipeline depends on, read once per run.
pub struct Resources {
    pub stopwords: String,
    pub blacklist: String,
    pub taxonomy: String,
}

impl Resources {
    pub fn preprocessor(&self) -> Preprocessor {
        Preprocessor::from_lists(&self.stopwords, &self.blacklist)
    }

    pub fn lexicon(&self) -> Result<TagLexicon, CliError> {
        TagLexicon::from_json(&self.taxonomy).map_err(|e| CliError::invalid("config", "paths.data/taxonomy.json", e))
    }
}

fn read_or(dir: Option<&Path>, name: &str, fallback: &str) -> io::Result<String> {
    let Some(dir) = dir else { return Ok(fallback.to_string()) };
    match fs::read_to_string(dir.join(name)) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(fallback.to_string()),
        Err(e) => Err(e),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let key = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| CliError::invalid("config", &key, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid("config", &key, e))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(CliError::invalid("config", "alpha", format!("must be a positive number, got {}", self.alpha)));
        }
        if self.folds < 2 {
            return Err(CliError::invalid("config", "folds", format!("must be at least 2, got {}", self.folds)));
        }
        if self.budgets.to_field_budgets().iter().all(|b| b.k == 0) {
            return Err(CliError::invalid("config", "budgets", "at least one field needs a non-zero budget"));
        }
        self.source_config()?;
        Ok(())
    }

    pub fn source_config(&self) -> Result<SourceDetectConfig, CliError> {
        SourceDetectConfig::new(self.threshold, &self.extensions).map_err(|e| {
            let key = if self.extensions.is_empty() { "extensions" } else { "threshold" };
            CliError::invalid("config", key, e)
        })
    }

    pub fn require_seed(&self, stage: &'static str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::invalid(stage, "seed", "this stage is stochastic and needs --seed"))
    }

    pub fn resources(&self, workspace: &Path) -> Result<Resources, CliError> {
        let dir = self.paths.data.as_ref().map(|d| workspace.join(d));
        let read = |name, fallback| {
            read_or(dir.as_deref(), name, fallback).map_err(|e| CliError::invalid("config", &format!("paths.data/{name}"), e))
        };
        Ok(Resources {
            stopwords: read("stopwords.txt", DEFAULT_STOPWORDS)?,
            blacklist: read("filename_blacklist.txt", DEFAULT_FILENAME_BLACKLIST)?,
            taxonomy: read("taxonomy.json", DEFAULT_TAXONOMY)?,
        })
    }

    /// Hash of everything that shapes the trained model and what it is
    /// applied to: tier, budgets, weighting, alpha, source filter and the
    /// preprocessing resources. Fold count and seed only affect evaluation.
    pub fn pipeline_hash(&self, res: &Resources) -> String {
        let mut extensions = self.extensions.clone();
        extensions.sort();
        let canonical = serde_json::json!({
            "tier": self.tier,
            "budgets": self.budgets,
            "weighting": self.weighting,
            "alpha": self.alpha,
            "threshold": self.threshold,
            "extensions": extensions,
            "stopwords": sha256_hex(res.stopwords.as_bytes()),
            "blacklist": sha256_hex(res.blacklist.as_bytes()),
            "taxonomy": sha256_hex(res.taxonomy.as_bytes()),
        });
        sha256_hex(canonical.to_string().as_bytes())
    }

    /// Pipeline hash extended with the evaluation settings.
    pub fn evaluation_hash(&self, res: &Resources) -> String {
        let canonical = serde_json::json!({
            "pipeline": self.pipeline_hash(res),
            "folds": self.folds,
            "seed": self.seed,
        });
        sha256_hex(canonical.to_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_sum_to_550() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.budgets.to_field_budgets().iter().map(|b| b.k).sum::<usize>(), 550);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"alpha": 0.5, "budgets": {"readme": 20}}"#).unwrap();
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.budgets.readme, 20);
        assert_eq!(c.budgets.description, 400);
        assert!(serde_json::from_str::<RunConfig>(r#"{"alpah": 1}"#).is_err());
    }

    #[test]
    fn hash_tracks_model_settings_only() {
        let res = RunConfig::default().resources(Path::new(".")).unwrap();
        let base = RunConfig::default();
        let mut other = base.clone();
        other.folds = 5;
        assert_eq!(base.pipeline_hash(&res), other.pipeline_hash(&res));
        assert_ne!(base.evaluation_hash(&res), other.evaluation_hash(&res));
        other.alpha = 0.5;
        assert_ne!(base.pipeline_hash(&res), other.pipeline_hash(&res));
        let mut shuffled = base.clone();
        shuffled.extensions.reverse();
        assert_eq!(base.pipeline_hash(&res), shuffled.pipeline_hash(&res));
    }

    #[test]
    fn invalid_values_name_their_key() {
        let c = RunConfig { threshold: 1.5, ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains("threshold"));
        let c = RunConfig { folds: 1, ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains("folds"));
    }
}
