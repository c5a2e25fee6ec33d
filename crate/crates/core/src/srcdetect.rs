//! Source-code detection from the share of files with a programming-language extension.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Assembly, C/C++, batch, shell, PowerShell, Java, Python, C#, Objective-C /
/// Matlab (`.m`), Pascal, Visual Basic, PHP, JavaScript and Go.
pub const DEFAULT_EXTENSIONS: &[&str] = &[
    "asm", "s", "c", "h", "cpp", "hpp", "cc", "bat", "sh", "ps1", "java", "py", "cs", "m", "pas", "vb", "php", "js",
    "go",
];

pub const DEFAULT_THRESHOLD: f64 = 0.75;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error("extension whitelist is empty")]
    EmptyWhitelist,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDetectConfig {
    pub threshold: f64,
    pub extension_whitelist: BTreeSet<String>,
}

impl Default for SourceDetectConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            extension_whitelist: DEFAULT_EXTENSIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SourceDetectConfig {
    pub fn new(threshold: f64, extensions: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Self, ConfigError> {
        let config = Self {
            threshold,
            extension_whitelist: extensions
                .into_iter()
                .map(|e| e.as_ref().trim().trim_start_matches('.').to_ascii_lowercase())
                .filter(|e| !e.is_empty())
                .collect(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(ConfigError::Threshold(self.threshold));
        }
        if self.extension_whitelist.is_empty() {
            return Err(ConfigError::EmptyWhitelist);
        }
        Ok(())
    }

    /// Reads a `key=value` file. Recognized keys: `threshold` and
    /// `extensions` (comma separated). Missing keys keep their defaults;
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| ConfigError::Parse { line: n + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| parse_err("expected key=value".into()))?;
            match key.trim() {
                "threshold" => {
                    config.threshold = value
                        .trim()
                        .parse()
                        .map_err(|e| parse_err(format!("threshold: {e}")))?;
                }
                "extensions" => {
                    config.extension_whitelist = value
                        .split(',')
                        .map(|e| e.trim().trim_start_matches('.').to_ascii_lowercase())
                        .filter(|e| !e.is_empty())
                        .collect();
                }
                other => return Err(parse_err(format!("unknown key `{other}`"))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_config_string(&self) -> String {
        let exts: Vec<&str> = self.extension_whitelist.iter().map(String::as_str).collect();
        format!("threshold={}\nextensions={}\n", self.threshold, exts.join(","))
    }
}

fn is_directory(path: &str) -> bool {
    path.ends_with('/') || path.ends_with('\\')
}

/// Lower-cased final extension of the last path component, if any.
fn extension(path: &str) -> Option<String> {
    let name = path.rsplit(['/', '\\']).next().unwrap_or(path);
    let (stem, ext) = name.rsplit_once('.')?;
    if stem.is_empty() || ext.is_empty() {
        // ".bashrc" style dotfiles carry no extension.
        return None;
    }
    Some(ext.to_ascii_lowercase())
}

/// Whether `path` names a file with a whitelisted extension (case-insensitive).
pub fn classify_file(path: &str, config: &SourceDetectConfig) -> bool {
    !is_directory(path) && extension(path).is_some_and(|e| config.extension_whitelist.contains(&e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceVerdict {
    pub is_source: bool,
    pub source_ratio: f64,
    pub source_file_count: usize,
    pub total_file_count: usize,
}

/// A repository holds source code when strictly more than `threshold` of its
/// files are source files. Directory entries are not counted.
pub fn detect<S: AsRef<str>>(repo_files: &[S], config: &SourceDetectConfig) -> SourceVerdict {
    let files = repo_files.iter().map(AsRef::as_ref).filter(|p| !p.is_empty() && !is_directory(p));
    let (mut total, mut source) = (0usize, 0usize);
    for f in files {
        total += 1;
        if classify_file(f, config) {
            source += 1;
        }
    }
    let source_ratio = if total == 0 { 0.0 } else { source as f64 / total as f64 };
    SourceVerdict { is_source: total > 0 && source_ratio > config.threshold, source_ratio, source_file_count: source, total_file_count: total }
}
