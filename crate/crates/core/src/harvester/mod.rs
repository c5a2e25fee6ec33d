//! Keyword-tier harvesting from the archive's search API.
//!
//! Every keyword is searched once per ranking order; since each search is
//! capped at 1000 results, the seven orderings together reach far more
//! distinct repositories than any single one. All requests funnel through a
//! single [`SharedLimiter`].

pub mod api;
#[cfg(feature = "live")]
pub mod live;
pub mod ratelimit;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{QueryTier, RepositoryRecord};
use api::{ArchiveApi, RemoteRepository, RepoStub, SEARCH_RESULT_CAP};
use ratelimit::{PermitSource, SharedLimiter};

pub use ratelimit::{Clock, RateLimitPolicy, RateLimiter, SimClock, SystemClock};

/// Environment variable holding the archive API token.
pub const TOKEN_ENV: &str = "ARCHIVE_API_TOKEN";
pub const PAGE_SIZE: u32 = 100;
pub const MAX_PAGES: u32 = 10;
pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error("keyword set is empty")]
    EmptyKeywordSet,
    #[error("keyword list contains a blank entry")]
    BlankKeyword,
    #[error("archive API returned status {status}: {message}")]
    Api { status: u16, message: String },
    #[error("credentials rejected: {0}")]
    Auth(String),
    #[error("repository `{0}` is gone")]
    Gone(String),
    #[error("repository `{0}` has no content")]
    Pathological(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("keyword file: {0}")]
    Io(#[from] io::Error),
}

impl HarvestError {
    /// Server-side and rate-limit failures are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            HarvestError::Api { status, .. } => *status == 429 || *status >= 500,
            HarvestError::Transport(_) => true,
            _ => false,
        }
    }
}

/// The archive's seven result orderings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOrder {
    BestMatch,
    MostStars,
    FewestStars,
    MostForks,
    FewestForks,
    MostRecent,
    LeastRecent,
}

impl RankOrder {
    pub const ALL: [RankOrder; 7] = [
        RankOrder::BestMatch,
        RankOrder::MostStars,
        RankOrder::FewestStars,
        RankOrder::MostForks,
        RankOrder::FewestForks,
        RankOrder::MostRecent,
        RankOrder::LeastRecent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RankOrder::BestMatch => "best_match",
            RankOrder::MostStars => "most_stars",
            RankOrder::FewestStars => "fewest_stars",
            RankOrder::MostForks => "most_forks",
            RankOrder::FewestForks => "fewest_forks",
            RankOrder::MostRecent => "most_recent",
            RankOrder::LeastRecent => "least_recent",
        }
    }
}

impl fmt::Display for RankOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RankOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RankOrder::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown rank order `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchTask {
    pub keyword: String,
    pub rank_order: RankOrder,
    /// Opaque continuation point; `None` starts from the first page.
    pub page_cursor: Option<String>,
}

/// One task per (keyword, order), keyword-major.
pub fn build_query_plan<S: AsRef<str>>(keywords: &[S], orders: &[RankOrder]) -> Result<Vec<SearchTask>, HarvestError> {
    if keywords.is_empty() {
        return Err(HarvestError::EmptyKeywordSet);
    }
    if keywords.iter().any(|k| k.as_ref().trim().is_empty()) {
        return Err(HarvestError::BlankKeyword);
    }
    Ok(keywords
        .iter()
        .flat_map(|k| {
            orders.iter().map(move |&o| SearchTask {
                keyword: k.as_ref().trim().to_string(),
                rank_order: o,
                page_cursor: None,
            })
        })
        .collect())
}

/// Nested keyword tiers; each keyword belongs to the smallest tier listing it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeywordTiers {
    tier_of: BTreeMap<String, QueryTier>,
}

impl KeywordTiers {
    pub fn from_lists(q1: &str, q50: &str, q137: &str) -> Self {
        let mut tier_of = BTreeMap::new();
        for (tier, text) in [(QueryTier::Q1, q1), (QueryTier::Q50, q50), (QueryTier::Q137, q137)] {
            for kw in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                tier_of.entry(kw.to_lowercase()).or_insert(tier);
            }
        }
        Self { tier_of }
    }

    /// Reads `q1.txt`, `q50.txt` and `q137.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, HarvestError> {
        let read = |t: QueryTier| std::fs::read_to_string(dir.join(format!("{}.txt", t.file_stem())));
        Ok(Self::from_lists(&read(QueryTier::Q1)?, &read(QueryTier::Q50)?, &read(QueryTier::Q137)?))
    }

    /// Keywords queried for `tier`, including those of smaller tiers.
    pub fn keywords(&self, tier: QueryTier) -> Vec<String> {
        self.tier_of.iter().filter(|(_, t)| **t <= tier).map(|(k, _)| k.clone()).collect()
    }

    pub fn tier_of(&self, keyword: &str) -> Option<QueryTier> {
        self.tier_of.get(&keyword.to_lowercase()).copied()
    }
}

/// Runs `op` with up to [`MAX_RETRIES`] retries on transient errors, doubling
/// the back-off from one second.
fn with_retries<T>(
    limiter: &SharedLimiter,
    mut op: impl FnMut() -> Result<T, HarvestError>,
) -> Result<T, HarvestError> {
    let mut delay = Duration::from_secs(1);
    let mut attempt = 0;
    loop {
        match op() {
            Err(e) if e.is_transient() && attempt < MAX_RETRIES => {
                log::warn!("transient archive error ({e}); retry {} in {delay:?}", attempt + 1);
                let clock = limiter.clock();
                clock.sleep_until(clock.now() + delay);
                delay *= 2;
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Drives searches and fetches against one archive.
pub struct Harvester<'a> {
    api: &'a dyn ArchiveApi,
    limiter: &'a SharedLimiter,
}

impl<'a> Harvester<'a> {
    pub fn new(api: &'a dyn ArchiveApi, limiter: &'a SharedLimiter) -> Self {
        Self { api, limiter }
    }

    /// All stubs for one task: pages of 100, at most 10 pages (1000 results).
    pub fn execute_search(&self, task: &SearchTask) -> Result<Vec<RepoStub>, HarvestError> {
        let mut page: u32 = task.page_cursor.as_deref().and_then(|c| c.parse().ok()).unwrap_or(1);
        let mut stubs = Vec::new();
        while page <= MAX_PAGES && stubs.len() < SEARCH_RESULT_CAP {
            let result = with_retries(self.limiter, || {
                self.api.search_page(self.limiter as &dyn PermitSource, &task.keyword, task.rank_order, page, PAGE_SIZE)
            })?;
            let got = result.items.len();
            stubs.extend(result.items);
            if got < PAGE_SIZE as usize || stubs.len() as u64 >= result.total_count {
                break;
            }
            page += 1;
        }
        stubs.truncate(SEARCH_RESULT_CAP);
        Ok(stubs)
    }

    /// Full record for one repository. Deleted and content-free repositories
    /// come back as `Gone` / `Pathological`; neither is retried.
    pub fn fetch_repository(&self, full_name: &str, tier: QueryTier) -> Result<RepositoryRecord, HarvestError> {
        let remote = with_retries(self.limiter, || self.api.fetch_repository(self.limiter, full_name))?;
        let record = to_record(remote, self.fetch_time(), tier);
        if record.is_pathological() {
            return Err(HarvestError::Pathological(full_name.to_string()));
        }
        Ok(record)
    }

    fn fetch_time(&self) -> DateTime<Utc> {
        let t = self.limiter.clock().now();
        DateTime::from_timestamp(t.as_secs() as i64, t.subsec_nanos()).unwrap_or_default()
    }

    /// Searches every keyword of `tier` under every order and returns each
    /// distinct stub with the smallest tier whose keyword found it.
    pub fn discover(&self, tiers: &KeywordTiers, tier: QueryTier, orders: &[RankOrder]) -> Result<BTreeMap<String, QueryTier>, HarvestError> {
        let keywords = tiers.keywords(tier);
        let plan = build_query_plan(&keywords, orders)?;
        let mut found: BTreeMap<String, QueryTier> = BTreeMap::new();
        for task in &plan {
            let kw_tier = tiers.tier_of(&task.keyword).unwrap_or(tier);
            for stub in self.execute_search(task)? {
                let e = found.entry(stub.full_name).or_insert(kw_tier);
                *e = (*e).min(kw_tier);
            }
        }
        Ok(found)
    }

    /// Fetches the given stubs with `workers` threads. Gone and pathological
    /// repositories are skipped and reported; any other error aborts.
    pub fn fetch_all(&self, stubs: &BTreeMap<String, QueryTier>, workers: usize) -> Result<HarvestOutcome, HarvestError> {
        let queue: Mutex<Vec<(&String, &QueryTier)>> = Mutex::new(stubs.iter().rev().collect());
        let results: Mutex<Vec<Result<RepositoryRecord, HarvestError>>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..workers.max(1) {
                scope.spawn(|| loop {
                    let Some((name, tier)) = queue.lock().expect("queue poisoned").pop() else {
                        break;
                    };
                    let r = self.fetch_repository(name, *tier);
                    let fatal = matches!(&r, Err(e) if !matches!(e, HarvestError::Gone(_) | HarvestError::Pathological(_)));
                    results.lock().expect("results poisoned").push(r);
                    if fatal {
                        queue.lock().expect("queue poisoned").clear();
                    }
                });
            }
        });
        let mut outcome = HarvestOutcome::default();
        for r in results.into_inner().expect("results poisoned") {
            match r {
                Ok(rec) => outcome.records.push(rec),
                Err(HarvestError::Gone(n)) => {
                    log::info!("skipping deleted repository {n}");
                    outcome.gone.insert(n);
                }
                Err(HarvestError::Pathological(n)) => {
                    log::info!("skipping empty repository {n}");
                    outcome.pathological.insert(n);
                }
                Err(e) => return Err(e),
            }
        }
        outcome.records.sort_by(|a, b| a.full_name.cmp(&b.full_name));
        Ok(outcome)
    }

    /// Discovery followed by fetching.
    pub fn harvest(&self, tiers: &KeywordTiers, tier: QueryTier, orders: &[RankOrder], workers: usize) -> Result<HarvestOutcome, HarvestError> {
        let stubs = self.discover(tiers, tier, orders)?;
        log::info!("discovered {} distinct repositories for {tier}", stubs.len());
        self.fetch_all(&stubs, workers)
    }
}

#[derive(Debug, Default)]
pub struct HarvestOutcome {
    pub records: Vec<RepositoryRecord>,
    pub gone: BTreeSet<String>,
    pub pathological: BTreeSet<String>,
}

fn to_record(r: RemoteRepository, fetched_at: DateTime<Utc>, tier: QueryTier) -> RepositoryRecord {
    RepositoryRecord {
        full_name: r.full_name,
        title: r.title,
        description: r.description,
        topics: r.topics,
        readme: r.readme,
        file_paths: r.file_paths,
        created_at: r.created_at,
        modified_at: r.modified_at,
        fork_count: r.fork_count,
        watcher_count: r.watcher_count,
        star_count: r.star_count,
        author_followers: r.author_followers,
        author_following: r.author_following,
        fetched_at,
        query_tier: tier,
    }
}
