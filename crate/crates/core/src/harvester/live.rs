//! HTTP client for the public archive's REST API (GitHub-compatible).

use std::time::Duration;

use chrono::NaiveDate;
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::Deserialize;

use super::api::{ArchiveApi, RemoteRepository, RepoStub, SearchPage};
use super::ratelimit::PermitSource;
use super::{HarvestError, RankOrder};

pub const DEFAULT_BASE_URL: &str = "https://api.github.com";

pub struct HttpArchive {
    client: Client,
    base: String,
    token: Option<String>,
}

impl HttpArchive {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Result<Self, HarvestError> {
        let client = Client::builder()
            .user_agent(concat!("repomine/", env!("CARGO_PKG_VERSION")))
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| HarvestError::Transport(e.to_string()))?;
        Ok(Self { client, base: base.into().trim_end_matches('/').to_string(), token })
    }

    /// Reads the token from `ARCHIVE_API_TOKEN`.
    pub fn from_env() -> Result<Self, HarvestError> {
        Self::new(DEFAULT_BASE_URL, std::env::var(super::TOKEN_ENV).ok().filter(|t| !t.trim().is_empty()))
    }

    fn get(&self, path: &str) -> RequestBuilder {
        let req = self
            .client
            .get(format!("{}{}", self.base, path))
            .header("Accept", "application/vnd.github+json");
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    fn send(&self, permits: &dyn PermitSource, req: RequestBuilder, name: &str) -> Result<Response, HarvestError> {
        permits.acquire();
        let resp = req.send().map_err(|e| HarvestError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().unwrap_or_default();
        Err(match status {
            StatusCode::UNAUTHORIZED => HarvestError::Auth(body),
            StatusCode::NOT_FOUND | StatusCode::GONE | StatusCode::UNAVAILABLE_FOR_LEGAL_REASONS => {
                HarvestError::Gone(name.to_string())
            }
            StatusCode::FORBIDDEN if body.contains("rate limit") => HarvestError::Api { status: 429, message: body },
            StatusCode::FORBIDDEN if body.contains("Bad credentials") => HarvestError::Auth(body),
            s => HarvestError::Api { status: s.as_u16(), message: body },
        })
    }
}

fn sort_params(order: RankOrder) -> Option<(&'static str, &'static str)> {
    match order {
        RankOrder::BestMatch => None,
        RankOrder::MostStars => Some(("stars", "desc")),
        RankOrder::FewestStars => Some(("stars", "asc")),
        RankOrder::MostForks => Some(("forks", "desc")),
        RankOrder::FewestForks => Some(("forks", "asc")),
        RankOrder::MostRecent => Some(("updated", "desc")),
        RankOrder::LeastRecent => Some(("updated", "asc")),
    }
}

#[derive(Deserialize)]
struct SearchResponse {
    total_count: u64,
    items: Vec<SearchItem>,
}

#[derive(Deserialize)]
struct SearchItem {
    full_name: String,
}

#[derive(Deserialize)]
struct RepoResponse {
    full_name: String,
    name: String,
    description: Option<String>,
    #[serde(default)]
    topics: Vec<String>,
    created_at: String,
    pushed_at: Option<String>,
    updated_at: String,
    forks_count: u64,
    stargazers_count: u64,
    #[serde(default)]
    subscribers_count: u64,
    default_branch: String,
    owner: Owner,
}

#[derive(Deserialize)]
struct Owner {
    login: String,
}

#[derive(Deserialize)]
struct UserResponse {
    followers: u64,
    following: u64,
}

#[derive(Deserialize)]
struct TreeResponse {
    tree: Vec<TreeEntry>,
}

#[derive(Deserialize)]
struct TreeEntry {
    path: String,
    #[serde(rename = "type")]
    kind: String,
}

fn date(s: &str) -> NaiveDate {
    s.get(..10)
        .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
        .unwrap_or_default()
}

fn json<T: for<'de> Deserialize<'de>>(resp: Response) -> Result<T, HarvestError> {
    resp.json().map_err(|e| HarvestError::Transport(e.to_string()))
}

impl ArchiveApi for HttpArchive {
    fn search_page(
        &self,
        permits: &dyn PermitSource,
        keyword: &str,
        order: RankOrder,
        page: u32,
        per_page: u32,
    ) -> Result<SearchPage, HarvestError> {
        let mut query: Vec<(&str, String)> =
            vec![("q", keyword.to_string()), ("per_page", per_page.to_string()), ("page", page.to_string())];
        if let Some((sort, dir)) = sort_params(order) {
            query.push(("sort", sort.into()));
            query.push(("order", dir.into()));
        }
        let resp = self.send(permits, self.get("/search/repositories").query(&query), keyword)?;
        let body: SearchResponse = json(resp)?;
        Ok(SearchPage {
            total_count: body.total_count,
            items: body.items.into_iter().map(|i| RepoStub { full_name: i.full_name }).collect(),
        })
    }

    fn fetch_repository(&self, permits: &dyn PermitSource, full_name: &str) -> Result<RemoteRepository, HarvestError> {
        let repo: RepoResponse = json(self.send(permits, self.get(&format!("/repos/{full_name}")), full_name)?)?;
        let readme = match self.send(
            permits,
            self.get(&format!("/repos/{full_name}/readme")).header("Accept", "application/vnd.github.raw"),
            full_name,
        ) {
            Ok(r) => r.text().unwrap_or_default(),
            Err(HarvestError::Gone(_)) => String::new(),
            Err(e) => return Err(e),
        };
        let tree = match self.send(
            permits,
            self.get(&format!("/repos/{full_name}/git/trees/{}?recursive=1", repo.default_branch)),
            full_name,
        ) {
            Ok(r) => json::<TreeResponse>(r)?.tree,
            // Empty repositories have no tree.
            Err(HarvestError::Gone(_)) | Err(HarvestError::Api { status: 409, .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        let user: UserResponse = json(self.send(permits, self.get(&format!("/users/{}", repo.owner.login)), full_name)?)?;
        let file_paths = tree
            .into_iter()
            .map(|e| if e.kind == "tree" { format!("{}/", e.path) } else { e.path })
            .collect();
        Ok(RemoteRepository {
            full_name: repo.full_name,
            title: repo.name,
            description: repo.description.unwrap_or_default(),
            topics: repo.topics,
            readme,
            file_paths,
            created_at: date(&repo.created_at),
            modified_at: date(repo.pushed_at.as_deref().unwrap_or(&repo.updated_at)).max(date(&repo.created_at)),
            fork_count: repo.forks_count,
            watcher_count: repo.subscribers_count,
            star_count: repo.stargazers_count,
            author_followers: user.followers,
            author_following: user.following,
        })
    }
}
