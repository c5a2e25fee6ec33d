//! Ecosystem statistics: popularity CCDFs, Pearson correlation, yearly
//! creation trends, author aggregates and top-k rankings.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::Path;

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::RepositoryRecord;
use crate::scalar::Scalar;
use crate::taxonomy::{build_matrix, TagAssignment, TagLexicon, TaxonomyMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("empty input")]
    EmptyInput,
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations")]
    TooShort,
    #[error("degenerate input: a sequence is constant")]
    DegenerateInput,
    #[error("metric {metric:?} does not apply to {entity:?}")]
    InvalidMetric { entity: Entity, metric: Metric },
}

/// Empirical `P[X ≥ x]` at each distinct observed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CcdfSeries<T> {
    pub points: Vec<(u64, T)>,
}

pub fn ccdf<T: Scalar>(values: &[u64]) -> Result<CcdfSeries<T>, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    let n = values.len() as u64;
    let total = T::from_u64(n).unwrap_or_else(T::infinity);
    let mut at_least = n;
    let mut points = Vec::with_capacity(counts.len());
    for (x, c) in counts {
        points.push((x, T::from_u64(at_least).unwrap_or_else(T::nan) / total));
        at_least -= c;
    }
    Ok(CcdfSeries { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CorrelationResult<T> {
    pub r: T,
    pub n: usize,
}

/// Pearson product-moment correlation.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<CorrelationResult<T>, AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalyticsError::TooShort);
    }
    let n = T::from_usize_lossy(x.len());
    let mean = |s: &[T]| s.iter().fold(T::zero(), |a, &b| a + b) / n;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(AnalyticsError::DegenerateInput);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(CorrelationResult { r: r.max(-T::one()).min(T::one()), n: x.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendGroup {
    None,
    Type,
    Platform,
}

/// New repositories per creation year. Years run contiguously over the
/// span observed in the whole input, so grouped series line up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub group: Option<String>,
    pub counts: BTreeMap<i32, u64>,
}

impl TrendSeries {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

pub fn yearly_trend(
    records: &[RepositoryRecord],
    group: TrendGroup,
    tags: &HashMap<String, TagAssignment>,
    lexicon: &TagLexicon,
) -> Vec<TrendSeries> {
    let years: Vec<i32> = records.iter().map(|r| r.created_at.year()).collect();
    let (Some(&lo), Some(&hi)) = (years.iter().min(), years.iter().max()) else {
        return Vec::new();
    };
    let empty = || (lo..=hi).map(|y| (y, 0u64)).collect::<BTreeMap<_, _>>();
    let groups: Vec<Option<String>> = match group {
        TrendGroup::None => vec![None],
        TrendGroup::Type => lexicon.types().iter().cloned().map(Some).collect(),
        TrendGroup::Platform => lexicon.platforms().iter().cloned().map(Some).collect(),
    };
    let mut series: Vec<TrendSeries> = groups.into_iter().map(|g| TrendSeries { group: g, counts: empty() }).collect();
    for (record, year) in records.iter().zip(years) {
        for s in &mut series {
            let member = match (&s.group, group) {
                (None, _) => true,
                (Some(g), TrendGroup::Type) => tags.get(&record.full_name).is_some_and(|t| t.types.contains(g)),
                (Some(g), _) => tags.get(&record.full_name).is_some_and(|t| t.platforms.contains(g)),
            };
            if member {
                *s.counts.get_mut(&year).expect("year in span") += 1;
            }
        }
    }
    series
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entity {
    Authors,
    Repos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RepoCount,
    Followers,
    Stars,
    Forks,
    Watchers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankEntry {
    pub name: String,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorStats {
    pub name: String,
    pub repo_count: u64,
    pub followers: u64,
}

/// Per-author aggregates over the given (malware-classified) records.
/// Follower counts are snapshots, so the largest observed value is kept.
pub fn author_stats(records: &[RepositoryRecord]) -> Vec<AuthorStats> {
    let mut by_author: BTreeMap<&str, AuthorStats> = BTreeMap::new();
    for r in records {
        let e = by_author.entry(r.owner()).or_insert_with(|| AuthorStats {
            name: r.owner().to_string(),
            repo_count: 0,
            followers: 0,
        });
        e.repo_count += 1;
        e.followers = e.followers.max(r.author_followers);
    }
    by_author.into_values().collect()
}

/// The `k` largest entities by `metric`, ties broken by ascending name.
/// `records` should hold malware-classified repositories only; an author's
/// repo count is the number of such records it owns.
pub fn top_k(
    records: &[RepositoryRecord],
    entity: Entity,
    metric: Metric,
    k: usize,
) -> Result<Vec<RankEntry>, AnalyticsError> {
    let mut entries: Vec<RankEntry> = match (entity, metric) {
        (Entity::Authors, Metric::RepoCount | Metric::Followers) => author_stats(records)
            .into_iter()
            .map(|a| RankEntry {
                value: if metric == Metric::RepoCount { a.repo_count } else { a.followers },
                name: a.name,
            })
            .collect(),
        (Entity::Repos, Metric::Stars | Metric::Forks | Metric::Watchers) => records
            .iter()
            .map(|r| RankEntry {
                name: r.full_name.clone(),
                value: match metric {
                    Metric::Stars => r.star_count,
                    Metric::Forks => r.fork_count,
                    _ => r.watcher_count,
                },
            })
            .collect(),
        _ => return Err(AnalyticsError::InvalidMetric { entity, metric }),
    };
    entries.sort_by(|a, b| b.value.cmp(&a.value).then_with(|| a.name.cmp(&b.name)));
    entries.truncate(k.max(1));
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCorrelation {
    pub x: String,
    pub y: String,
    /// `None` when either metric is constant or fewer than two repositories exist.
    pub result: Option<CorrelationResult<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcosystemReport {
    pub repositories: usize,
    pub authors: usize,
    pub ccdf: BTreeMap<String, CcdfSeries<f64>>,
    pub correlations: Vec<NamedCorrelation>,
    /// Significance levels are not computed; correlations report `r` and `n` only.
    pub correlation_note: String,
    pub trend_all: Vec<TrendSeries>,
    pub trend_by_type: Vec<TrendSeries>,
    pub trend_by_platform: Vec<TrendSeries>,
    pub taxonomy: TaxonomyMatrix,
    pub top_authors_by_repos: Vec<RankEntry>,
    pub top_authors_by_followers: Vec<RankEntry>,
    pub top_repos_by_stars: Vec<RankEntry>,
    pub top_repos_by_forks: Vec<RankEntry>,
    pub top_repos_by_watchers: Vec<RankEntry>,
}

/// Assembles every statistic for a set of malware repositories and their tags.
pub fn ecosystem_report(
    records: &[RepositoryRecord],
    tags: &[TagAssignment],
    lexicon: &TagLexicon,
    k: usize,
) -> EcosystemReport {
    let column = |f: fn(&RepositoryRecord) -> u64| records.iter().map(f).collect::<Vec<u64>>();
    let forks = column(|r| r.fork_count);
    let stars = column(|r| r.star_count);
    let watchers = column(|r| r.watcher_count);
    let authors = author_stats(records);
    let per_author: Vec<u64> = authors.iter().map(|a| a.repo_count).collect();
    let followers: Vec<u64> = authors.iter().map(|a| a.followers).collect();

    let mut ccdfs = BTreeMap::new();
    for (name, vals) in [
        ("forks", &forks),
        ("stars", &stars),
        ("watchers", &watchers),
        ("repos_per_author", &per_author),
        ("author_followers", &followers),
    ] {
        if let Ok(c) = ccdf(vals) {
            ccdfs.insert(name.to_string(), c);
        }
    }

    let as_f64 = |v: &[u64]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let correlations = [("stars", &stars, "forks", &forks), ("stars", &stars, "watchers", &watchers), ("forks", &forks, "watchers", &watchers)]
        .into_iter()
        .map(|(xn, x, yn, y)| NamedCorrelation {
            x: xn.into(),
            y: yn.into(),
            result: pearson(&as_f64(x), &as_f64(y)).ok(),
        })
        .collect();

    let tag_map: HashMap<String, TagAssignment> = tags.iter().map(|t| (t.repo_name.clone(), t.clone())).collect();
    let rank = |entity, metric| top_k(records, entity, metric, k).expect("valid entity/metric pair");
    EcosystemReport {
        repositories: records.len(),
        authors: authors.len(),
        ccdf: ccdfs,
        correlations,
        correlation_note: "r and n only; significance levels are not computed".into(),
        trend_all: yearly_trend(records, TrendGroup::None, &tag_map, lexicon),
        trend_by_type: yearly_trend(records, TrendGroup::Type, &tag_map, lexicon),
        trend_by_platform: yearly_trend(records, TrendGroup::Platform, &tag_map, lexicon),
        taxonomy: build_matrix(lexicon, tags),
        top_authors_by_repos: rank(Entity::Authors, Metric::RepoCount),
        top_authors_by_followers: rank(Entity::Authors, Metric::Followers),
        top_repos_by_stars: rank(Entity::Repos, Metric::Stars),
        top_repos_by_forks: rank(Entity::Repos, Metric::Forks),
        top_repos_by_watchers: rank(Entity::Repos, Metric::Watchers),
    }
}

/// Writes one plot-data CSV per figure into `dir`.
pub fn write_figures(report: &EcosystemReport, dir: &Path) -> io::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("popularity_ccdf.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["metric", "x", "fraction"])?;
    for (metric, series) in &report.ccdf {
        for (x, f) in &series.points {
            w.write_record([metric.as_str(), &x.to_string(), &f.to_string()])?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("yearly_trend.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["grouping", "group", "year", "count"])?;
    for (grouping, all) in [("all", &report.trend_all), ("type", &report.trend_by_type), ("platform", &report.trend_by_platform)] {
        for s in all {
            for (year, count) in &s.counts {
                w.write_record([grouping, s.group.as_deref().unwrap_or("all"), &year.to_string(), &count.to_string()])?;
            }
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("type_platform_matrix.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let m = &report.taxonomy;
    let mut header = vec!["type".to_string()];
    header.extend(m.platforms.iter().cloned());
    header.push("total".into());
    w.write_record(&header)?;
    for (t, row) in m.types.iter().zip(&m.cells) {
        let mut rec = vec![t.clone()];
        rec.extend(row.iter().map(u64::to_string));
        rec.push(row.iter().sum::<u64>().to_string());
        w.write_record(&rec)?;
    }
    let mut totals = vec!["total".to_string()];
    totals.extend(m.platform_totals.iter().map(u64::to_string));
    totals.push(m.grand_total.to_string());
    w.write_record(&totals)?;
    w.flush()?;
    written.push(path);

    Ok(written)
}
