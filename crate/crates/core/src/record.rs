//! Repository records as harvested from the archive.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nested keyword tiers used to query the archive. `Q1 ⊂ Q50 ⊂ Q137`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QueryTier {
    Q1,
    Q50,
    Q137,
}

impl QueryTier {
    pub const ALL: [QueryTier; 3] = [QueryTier::Q1, QueryTier::Q50, QueryTier::Q137];

    /// Tiers whose result set contains a record first found by `self`.
    pub fn enclosing(self) -> impl Iterator<Item = QueryTier> {
        Self::ALL.into_iter().filter(move |t| *t >= self)
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            QueryTier::Q1 => "q1",
            QueryTier::Q50 => "q50",
            QueryTier::Q137 => "q137",
        }
    }
}

impl fmt::Display for QueryTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryTier::Q1 => "Q1",
            QueryTier::Q50 => "Q50",
            QueryTier::Q137 => "Q137",
        })
    }
}

impl FromStr for QueryTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "Q1" => Ok(QueryTier::Q1),
            "Q50" => Ok(QueryTier::Q50),
            "Q137" => Ok(QueryTier::Q137),
            other => Err(format!("unknown query tier `{other}`")),
        }
    }
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Malware,
    Benign,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Malware, Class::Benign];

    pub fn index(self) -> usize {
        match self {
            Class::Malware => 0,
            Class::Benign => 1,
        }
    }

    pub fn other(self) -> Class {
        match self {
            Class::Malware => Class::Benign,
            Class::Benign => Class::Malware,
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::Malware => "malware",
            Class::Benign => "benign",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("full_name `{0}` is not of the form owner/name")]
    BadName(String),
    #[error("{name}: created_at {created} is after modified_at {modified}")]
    DateOrder {
        name: String,
        created: NaiveDate,
        modified: NaiveDate,
    },
}

/// One archived repository. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepositoryRecord {
    pub full_name: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default)]
    pub readme: String,
    #[serde(default)]
    pub file_paths: Vec<String>,
    pub created_at: NaiveDate,
    pub modified_at: NaiveDate,
    pub fork_count: u64,
    pub watcher_count: u64,
    pub star_count: u64,
    pub author_followers: u64,
    pub author_following: u64,
    pub fetched_at: DateTime<Utc>,
    pub query_tier: QueryTier,
}

impl RepositoryRecord {
    pub fn owner(&self) -> &str {
        self.full_name.split('/').next().unwrap_or(&self.full_name)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut parts = self.full_name.split('/');
        let ok = matches!(
            (parts.next(), parts.next(), parts.next()),
            (Some(o), Some(n), None) if !o.trim().is_empty() && !n.trim().is_empty()
        );
        if !ok {
            return Err(ValidationError::BadName(self.full_name.clone()));
        }
        if self.created_at > self.modified_at {
            return Err(ValidationError::DateOrder {
                name: self.full_name.clone(),
                created: self.created_at,
                modified: self.modified_at,
            });
        }
        Ok(())
    }

    /// Repositories with no files and no prose carry no content worth classifying.
    pub fn is_pathological(&self) -> bool {
        self.file_paths.is_empty() && self.description.trim().is_empty() && self.readme.trim().is_empty()
    }

    /// Equality on every field except `fetched_at`.
    pub fn same_content(&self, other: &RepositoryRecord) -> bool {
        let mut a = self.clone();
        a.fetched_at = other.fetched_at;
        &a == other
    }
}
