use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use repomine::corpus::{write_atomic, CorpusSnapshot, StoreError, LABELS_FILE};
use repomine::labels::{self, consensus, Ballot, BallotLabel, ConsensusStatus};
use repomine::RepositoryRecord;

/// Append-only ballot log inside the workspace.
pub const BALLOTS_FILE: &str = "ballots.jsonl";
pub const DEFAULT_QUORUM: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown repository {0}")]
    UnknownRepo(String),
    #[error("unknown judge {0}")]
    UnknownJudge(String),
    #[error("judge ids must be non-empty")]
    BlankJudge,
    #[error("no judges registered")]
    NoJudges,
    #[error("quorum must be at least 1")]
    InvalidQuorum,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{BALLOTS_FILE} line {line}: {source}")]
    Log { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workspace: PathBuf,
    pub judges: Vec<String>,
    pub quorum: usize,
    /// Seeds every judge's queue order.
    pub seed: u64,
}

impl ServiceConfig {
    pub fn new(workspace: impl Into<PathBuf>, judges: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            workspace: workspace.into(),
            judges: judges.into_iter().map(Into::into).collect(),
            quorum: DEFAULT_QUORUM,
            seed: 0,
        }
    }
}

/// What a judge sees: their next repository and how many remain for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueView {
    pub judge_id: String,
    pub remaining: usize,
    pub total: usize,
    pub next: Option<RepositoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallotRequest {
    pub repo_name: String,
    pub judge_id: String,
    pub label: BallotLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallotReceipt {
    pub repo_name: String,
    pub judge_id: String,
    pub label: BallotLabel,
    /// true when this replaced an earlier ballot of the same judge
    pub revised: bool,
    pub status: ConsensusStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusEntry {
    pub repo_name: String,
    pub status: ConsensusStatus,
    pub ballots: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeProgress {
    pub balloted: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub repositories: usize,
    pub quorum: usize,
    pub judges: BTreeMap<String, JudgeProgress>,
    pub status: BTreeMap<ConsensusStatus, usize>,
}

struct Ledger {
    /// repo -> judge -> latest label
    votes: BTreeMap<String, BTreeMap<String, BallotLabel>>,
    log: File,
}

/// Judge protocol over one workspace. Ballot writes go through a single lock,
/// so they are serialized and every read sees a consistent ledger.
pub struct LabelService {
    workspace: PathBuf,
    quorum: usize,
    repos: BTreeMap<String, RepositoryRecord>,
    queues: BTreeMap<String, Vec<String>>,
    ledger: Mutex<Ledger>,
}

fn judge_seed(seed: u64, judge: &str) -> u64 {
    // FNV-1a, stable across platforms and runs
    judge.bytes().fold(0xcbf2_9ce4_8422_2325 ^ seed, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn replay(path: &Path) -> Result<Vec<Ballot>, ServiceError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| ServiceError::Log { line: i + 1, source }))
        .collect()
}

impl LabelService {
    /// Loads `corpus.jsonl` and replays `ballots.jsonl` from the workspace.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        if config.quorum == 0 {
            return Err(ServiceError::InvalidQuorum);
        }
        if config.judges.is_empty() {
            return Err(ServiceError::NoJudges);
        }
        if config.judges.iter().any(|j| j.trim().is_empty()) {
            return Err(ServiceError::BlankJudge);
        }
        let snapshot = CorpusSnapshot::load_dir(&config.workspace)?;
        let repos: BTreeMap<String, RepositoryRecord> =
            snapshot.records().map(|r| (r.full_name.clone(), r.clone())).collect();

        let queues = config
            .judges
            .iter()
            .map(|j| {
                let mut names: Vec<String> = repos.keys().cloned().collect();
                names.shuffle(&mut ChaCha8Rng::seed_from_u64(judge_seed(config.seed, j)));
                (j.clone(), names)
            })
            .collect();

        let log_path = config.workspace.join(BALLOTS_FILE);
        let past = replay(&log_path)?;
        let known: Vec<&Ballot> = past
            .iter()
            .filter(|b| {
                let ok = repos.contains_key(&b.repo_name);
                if !ok {
                    log::warn!("ignoring ballot for {} which is not in the corpus", b.repo_name);
                }
                ok
            })
            .collect();
        let votes = labels::materialize(known);
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Self {
            workspace: config.workspace,
            quorum: config.quorum,
            repos,
            queues,
            ledger: Mutex::new(Ledger { votes, log }),
        })
    }

    fn ledger(&self) -> std::sync::MutexGuard<'_, Ledger> {
        self.ledger.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn judges(&self) -> impl Iterator<Item = &str> {
        self.queues.keys().map(String::as_str)
    }

    pub fn repository(&self, name: &str) -> Result<&RepositoryRecord, ServiceError> {
        self.repos.get(name).ok_or_else(|| ServiceError::UnknownRepo(name.to_string()))
    }

    /// The judge's next repository without a ballot from them. Only that
    /// judge's own ballots influence the answer.
    pub fn next_unlabeled(&self, judge: &str) -> Result<QueueView, ServiceError> {
        let queue = self.queues.get(judge).ok_or_else(|| ServiceError::UnknownJudge(judge.to_string()))?;
        let ledger = self.ledger();
        let mine = |repo: &String| ledger.votes.get(repo).is_some_and(|v| v.contains_key(judge));
        let open: Vec<&String> = queue.iter().filter(|r| !mine(r)).collect();
        Ok(QueueView {
            judge_id: judge.to_string(),
            remaining: open.len(),
            total: queue.len(),
            next: open.first().map(|r| self.repos[*r].clone()),
        })
    }

    /// Records a ballot (last write per judge wins) and returns the
    /// repository's consensus afterwards.
    pub fn submit(&self, req: BallotRequest) -> Result<BallotReceipt, ServiceError> {
        if req.judge_id.trim().is_empty() {
            return Err(ServiceError::BlankJudge);
        }
        if !self.queues.contains_key(&req.judge_id) {
            return Err(ServiceError::UnknownJudge(req.judge_id));
        }
        self.repository(&req.repo_name)?;
        let ballot = Ballot {
            repo_name: req.repo_name,
            judge_id: req.judge_id,
            label: req.label,
            timestamp: req.timestamp.unwrap_or_else(Utc::now),
        };
        let mut ledger = self.ledger();
        let line = serde_json::to_string(&ballot).expect("ballot serializes");
        writeln!(ledger.log, "{line}")?;
        ledger.log.flush()?;
        let votes = ledger.votes.entry(ballot.repo_name.clone()).or_default();
        let previous = votes.insert(ballot.judge_id.clone(), ballot.label);
        if let Some(old) = previous {
            log::info!("{} revised {} from {:?} to {:?}", ballot.judge_id, ballot.repo_name, old, ballot.label);
        }
        let status = consensus(votes.values(), self.quorum);
        Ok(BallotReceipt {
            repo_name: ballot.repo_name,
            judge_id: ballot.judge_id,
            label: ballot.label,
            revised: previous.is_some(),
            status,
        })
    }

    /// Status of every repository in the corpus, sorted by name.
    pub fn consensus(&self) -> Vec<ConsensusEntry> {
        let ledger = self.ledger();
        self.repos
            .keys()
            .map(|name| {
                let votes = ledger.votes.get(name);
                ConsensusEntry {
                    repo_name: name.clone(),
                    status: votes.map_or(ConsensusStatus::Pending, |v| consensus(v.values(), self.quorum)),
                    ballots: votes.map_or(0, BTreeMap::len),
                }
            })
            .collect()
    }

    /// Ground truth as `labels.jsonl` text, sorted by repository name.
    pub fn export_text(&self) -> String {
        let ledger = self.ledger();
        labels::to_jsonl(&labels::ground_truth(&ledger.votes, self.quorum))
    }

    /// Writes the ground truth to the workspace's `labels.jsonl` and returns it.
    pub fn export(&self) -> Result<String, ServiceError> {
        let text = self.export_text();
        write_atomic(&self.workspace.join(LABELS_FILE), text.as_bytes())?;
        Ok(text)
    }

    pub fn progress(&self) -> Progress {
        let entries = self.consensus();
        let mut status = BTreeMap::new();
        for e in &entries {
            *status.entry(e.status).or_insert(0) += 1;
        }
        let ledger = self.ledger();
        let judges = self
            .queues
            .keys()
            .map(|j| {
                let balloted = ledger.votes.values().filter(|v| v.contains_key(j)).count();
                (j.clone(), JudgeProgress { balloted, remaining: self.repos.len() - balloted })
            })
            .collect();
        Progress { repositories: self.repos.len(), quorum: self.quorum, judges, status }
    }
}
