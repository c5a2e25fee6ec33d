//! Judge ballots and unanimous-consensus ground truth.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::record::Class;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BallotLabel {
    Malware,
    Benign,
    Uncertain,
}

impl BallotLabel {
    pub fn class(self) -> Option<Class> {
        match self {
            BallotLabel::Malware => Some(Class::Malware),
            BallotLabel::Benign => Some(Class::Benign),
            BallotLabel::Uncertain => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub repo_name: String,
    pub judge_id: String,
    pub label: BallotLabel,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusStatus {
    Pending,
    KeptMalware,
    KeptBenign,
    Excluded,
}

impl ConsensusStatus {
    pub fn class(self) -> Option<Class> {
        match self {
            ConsensusStatus::KeptMalware => Some(Class::Malware),
            ConsensusStatus::KeptBenign => Some(Class::Benign),
            _ => None,
        }
    }
}

/// Unanimity rule: below quorum the repository is pending; at quorum it is
/// kept only if every ballot carries the same certain label.
pub fn consensus<'a>(labels: impl IntoIterator<Item = &'a BallotLabel>, quorum: usize) -> ConsensusStatus {
    let labels: Vec<BallotLabel> = labels.into_iter().copied().collect();
    if labels.len() < quorum.max(1) {
        return ConsensusStatus::Pending;
    }
    let first = labels[0];
    if labels.iter().any(|&l| l != first) {
        return ConsensusStatus::Excluded;
    }
    match first {
        BallotLabel::Malware => ConsensusStatus::KeptMalware,
        BallotLabel::Benign => ConsensusStatus::KeptBenign,
        BallotLabel::Uncertain => ConsensusStatus::Excluded,
    }
}

/// One judge's final vote, as exported alongside the consensus label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JudgeVote {
    pub judge_id: String,
    pub label: BallotLabel,
}

/// A ground-truth line of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub full_name: String,
    pub label: Class,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ballots: Vec<JudgeVote>,
}

/// Last-write-wins view of a ballot log: `repo → judge → label`.
pub fn materialize<'a>(ballots: impl IntoIterator<Item = &'a Ballot>) -> BTreeMap<String, BTreeMap<String, BallotLabel>> {
    let mut out: BTreeMap<String, BTreeMap<String, BallotLabel>> = BTreeMap::new();
    for b in ballots {
        out.entry(b.repo_name.clone()).or_default().insert(b.judge_id.clone(), b.label);
    }
    out
}

/// Ground truth from materialized ballots: only repositories kept unanimously.
pub fn ground_truth(votes: &BTreeMap<String, BTreeMap<String, BallotLabel>>, quorum: usize) -> Vec<LabeledExample> {
    votes
        .iter()
        .filter_map(|(repo, judges)| {
            let class = consensus(judges.values(), quorum).class()?;
            Some(LabeledExample {
                full_name: repo.clone(),
                label: class,
                ballots: judges
                    .iter()
                    .map(|(j, l)| JudgeVote { judge_id: j.clone(), label: *l })
                    .collect(),
            })
        })
        .collect()
}

pub fn to_jsonl(examples: &[LabeledExample]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("label serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<LabeledExample>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}
