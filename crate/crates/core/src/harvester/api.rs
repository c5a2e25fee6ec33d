//! Archive API surface and the deterministic in-process test archive.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ratelimit::{Clock, PermitSource};
use super::{HarvestError, RankOrder};

/// Largest number of results one search returns, whatever the pagination.
pub const SEARCH_RESULT_CAP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RepoStub {
    pub full_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchPage {
    pub total_count: u64,
    pub items: Vec<RepoStub>,
}

/// Repository metadata as served by the archive, before provenance is attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteRepository {
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
    #[serde(default)]
    pub fork_count: u64,
    #[serde(default)]
    pub watcher_count: u64,
    #[serde(default)]
    pub star_count: u64,
    #[serde(default)]
    pub author_followers: u64,
    #[serde(default)]
    pub author_following: u64,
}

/// Archive operations. Implementations call `permits.acquire()` before every
/// network request they make.
pub trait ArchiveApi: Send + Sync {
    /// One page of search results; `page` starts at 1.
    fn search_page(
        &self,
        permits: &dyn PermitSource,
        keyword: &str,
        order: RankOrder,
        page: u32,
        per_page: u32,
    ) -> Result<SearchPage, HarvestError>;

    fn fetch_repository(&self, permits: &dyn PermitSource, full_name: &str) -> Result<RemoteRepository, HarvestError>;
}

/// Deterministic archive fixture. Search matches the keyword as a
/// case-insensitive substring of title, description, topics or README, and
/// like the real service refuses to page past the result cap. Forks are never
/// part of the fixture.
#[derive(Default)]
pub struct MockArchive {
    repos: BTreeMap<String, RemoteRepository>,
    deleted: BTreeSet<String>,
    revoked: bool,
    transient_failures: Mutex<u32>,
    requests: AtomicU64,
    clock: Option<Arc<dyn Clock>>,
    request_log: Mutex<Vec<std::time::Duration>>,
}

impl MockArchive {
    pub fn new(repos: impl IntoIterator<Item = RemoteRepository>) -> Self {
        Self { repos: repos.into_iter().map(|r| (r.full_name.clone(), r)).collect(), ..Default::default() }
    }

    /// Marks a repository as deleted: searches still list it, fetches fail.
    pub fn delete(&mut self, full_name: &str) {
        self.deleted.insert(full_name.to_string());
    }

    pub fn revoke_credentials(&mut self) {
        self.revoked = true;
    }

    /// The next `n` requests fail with a retryable server error.
    pub fn fail_next(&self, n: u32) {
        *self.transient_failures.lock().expect("poisoned") = n;
    }

    /// Records the clock time of every request served.
    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn request_times(&self) -> Vec<std::time::Duration> {
        self.request_log.lock().expect("poisoned").clone()
    }

    pub fn update(&mut self, repo: RemoteRepository) {
        self.repos.insert(repo.full_name.clone(), repo);
    }

    fn serve(&self, permits: &dyn PermitSource) -> Result<(), HarvestError> {
        permits.acquire();
        self.requests.fetch_add(1, Ordering::SeqCst);
        if let Some(c) = &self.clock {
            self.request_log.lock().expect("poisoned").push(c.now());
        }
        if self.revoked {
            return Err(HarvestError::Auth("bad credentials".into()));
        }
        let mut failures = self.transient_failures.lock().expect("poisoned");
        if *failures > 0 {
            *failures -= 1;
            return Err(HarvestError::Api { status: 502, message: "bad gateway".into() });
        }
        Ok(())
    }

    fn relevance(repo: &RemoteRepository, keyword: &str) -> usize {
        let text = format!("{} {} {} {}", repo.title, repo.description, repo.topics.join(" "), repo.readme).to_lowercase();
        text.matches(keyword).count()
    }

    fn matches(&self, keyword: &str, order: RankOrder) -> Vec<&RemoteRepository> {
        let kw = keyword.to_lowercase();
        let mut hits: Vec<(&RemoteRepository, usize)> = self
            .repos
            .values()
            .map(|r| (r, Self::relevance(r, &kw)))
            .filter(|(_, score)| *score > 0)
            .collect();
        hits.sort_by(|(a, sa), (b, sb)| {
            let primary = match order {
                RankOrder::BestMatch => sb.cmp(sa),
                RankOrder::MostStars => b.star_count.cmp(&a.star_count),
                RankOrder::FewestStars => a.star_count.cmp(&b.star_count),
                RankOrder::MostForks => b.fork_count.cmp(&a.fork_count),
                RankOrder::FewestForks => a.fork_count.cmp(&b.fork_count),
                RankOrder::MostRecent => b.modified_at.cmp(&a.modified_at),
                RankOrder::LeastRecent => a.modified_at.cmp(&b.modified_at),
            };
            primary.then_with(|| a.full_name.cmp(&b.full_name))
        });
        hits.into_iter().map(|(r, _)| r).collect()
    }
}

impl ArchiveApi for MockArchive {
    fn search_page(
        &self,
        permits: &dyn PermitSource,
        keyword: &str,
        order: RankOrder,
        page: u32,
        per_page: u32,
    ) -> Result<SearchPage, HarvestError> {
        self.serve(permits)?;
        let hits = self.matches(keyword, order);
        let start = (page.max(1) as usize - 1) * per_page as usize;
        if start >= SEARCH_RESULT_CAP {
            return Err(HarvestError::Api {
                status: 422,
                message: "only the first 1000 search results are available".into(),
            });
        }
        let end = (start + per_page as usize).min(SEARCH_RESULT_CAP).min(hits.len());
        let items = hits
            .get(start..end)
            .unwrap_or_default()
            .iter()
            .map(|r| RepoStub { full_name: r.full_name.clone() })
            .collect();
        Ok(SearchPage { total_count: hits.len() as u64, items })
    }

    fn fetch_repository(&self, permits: &dyn PermitSource, full_name: &str) -> Result<RemoteRepository, HarvestError> {
        self.serve(permits)?;
        if self.deleted.contains(full_name) {
            return Err(HarvestError::Gone(full_name.to_string()));
        }
        self.repos
            .get(full_name)
            .cloned()
            .ok_or_else(|| HarvestError::Gone(full_name.to_string()))
    }
}
