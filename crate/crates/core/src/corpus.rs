//! Durable corpus of repository records and ground-truth labels, stored as
//! line-delimited JSON.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::labels::{self, LabeledExample};
use crate::record::{Class, QueryTier, RepositoryRecord, ValidationError};
use crate::textprep::normalize_chars;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
const LOCK_FILE: &str = ".corpus.lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage: {0}")]
    Io(#[from] io::Error),
    #[error("invalid record: {0}")]
    Validation(#[from] ValidationError),
    #[error("{file}:{line}: {source}")]
    Parse {
        file: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("label for unknown repository `{0}`")]
    UnknownRepo(String),
    #[error("store at {0} is locked by another writer")]
    Locked(PathBuf),
}

/// In-memory view of the corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusSnapshot {
    records: BTreeMap<String, RepositoryRecord>,
    labels: BTreeMap<String, Class>,
}

impl CorpusSnapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&RepositoryRecord> {
        self.records.get(name)
    }

    pub fn records(&self) -> impl Iterator<Item = &RepositoryRecord> {
        self.records.values()
    }

    pub fn labels(&self) -> &BTreeMap<String, Class> {
        &self.labels
    }

    /// Inserts or replaces by `full_name`. The newer `fetched_at` wins and tier
    /// provenance is merged (the smallest tier that found the repository is
    /// kept). Returns whether the snapshot changed.
    pub fn upsert(&mut self, mut record: RepositoryRecord) -> Result<bool, StoreError> {
        record.validate()?;
        match self.records.get_mut(&record.full_name) {
            None => {
                self.records.insert(record.full_name.clone(), record);
                Ok(true)
            }
            Some(existing) => {
                let tier = existing.query_tier.min(record.query_tier);
                if record.fetched_at < existing.fetched_at {
                    if tier != existing.query_tier {
                        existing.query_tier = tier;
                        return Ok(true);
                    }
                    return Ok(false);
                }
                record.query_tier = tier;
                if *existing == record {
                    return Ok(false);
                }
                *existing = record;
                Ok(true)
            }
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<RepositoryRecord> {
        self.labels.remove(name);
        self.records.remove(name)
    }

    pub fn set_label(&mut self, name: &str, class: Class) -> Result<(), StoreError> {
        if !self.records.contains_key(name) {
            return Err(StoreError::UnknownRepo(name.to_string()));
        }
        self.labels.insert(name.to_string(), class);
        Ok(())
    }

    /// Tiers whose query results include `name` (closed upward: Q1 ⇒ Q50 ⇒ Q137).
    pub fn tier_membership(&self, name: &str) -> BTreeSet<QueryTier> {
        self.records
            .get(name)
            .map(|r| r.query_tier.enclosing().collect())
            .unwrap_or_default()
    }

    /// Records retrieved by the keyword set of `tier`.
    pub fn export_tier(&self, tier: QueryTier) -> Vec<&RepositoryRecord> {
        self.records.values().filter(|r| r.query_tier <= tier).collect()
    }

    /// Groups (size ≥ 2) of records with identical normalized content.
    pub fn find_exact_duplicates(&self) -> Vec<Vec<String>> {
        let mut by_hash: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in self.records.values() {
            by_hash.entry(content_hash(r)).or_default().push(r.full_name.clone());
        }
        let mut groups: Vec<Vec<String>> = by_hash.into_values().filter(|g| g.len() >= 2).collect();
        groups.sort();
        groups
    }

    /// Drops every duplicate but the lexicographically first member of each group.
    pub fn remove_exact_duplicates(&mut self) -> Vec<String> {
        let mut removed = Vec::new();
        for group in self.find_exact_duplicates() {
            for name in &group[1..] {
                self.remove(name);
                removed.push(name.clone());
            }
        }
        removed
    }

    /// Pairs whose word sets have Jaccard similarity ≥ `threshold` but are not
    /// exact duplicates. These are only flagged for human review.
    pub fn near_duplicate_candidates(&self, threshold: f64) -> Vec<(String, String, f64)> {
        let sets: Vec<(&str, String, HashSet<String>)> = self
            .records
            .values()
            .map(|r| {
                let words = normalized_fields(r).split_whitespace().map(str::to_string).collect();
                (r.full_name.as_str(), content_hash(r), words)
            })
            .collect();
        let mut out = Vec::new();
        for (i, (a, ha, wa)) in sets.iter().enumerate() {
            for (b, hb, wb) in &sets[i + 1..] {
                if ha == hb || (wa.is_empty() && wb.is_empty()) {
                    continue;
                }
                let inter = wa.intersection(wb).count() as f64;
                let union = (wa.len() + wb.len()) as f64 - inter;
                let j = inter / union;
                if j >= threshold {
                    out.push((a.to_string(), b.to_string(), j));
                }
            }
        }
        out
    }

    /// `corpus.jsonl` contents: one record per line, sorted by name.
    pub fn records_to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records.values() {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn labels_to_jsonl(&self) -> String {
        let examples: Vec<LabeledExample> = self
            .labels
            .iter()
            .map(|(n, c)| LabeledExample { full_name: n.clone(), label: *c, ballots: Vec::new() })
            .collect();
        labels::to_jsonl(&examples)
    }

    /// Replays `corpus.jsonl` lines through [`CorpusSnapshot::upsert`].
    pub fn load_records(&mut self, text: &str, file: &str) -> Result<(), StoreError> {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: RepositoryRecord =
                serde_json::from_str(line).map_err(|source| StoreError::Parse { file: file.into(), line: i + 1, source })?;
            self.upsert(record)?;
        }
        Ok(())
    }

    pub fn load_labels(&mut self, text: &str, file: &str) -> Result<(), StoreError> {
        let examples =
            labels::from_jsonl(text).map_err(|(line, source)| StoreError::Parse { file: file.into(), line, source })?;
        for e in examples {
            self.set_label(&e.full_name, e.label)?;
        }
        Ok(())
    }

    /// Reads `corpus.jsonl` and, when present, `labels.jsonl` from `dir`
    /// without taking the writer lock.
    pub fn load_dir(dir: &Path) -> Result<Self, StoreError> {
        let mut snap = Self::new();
        match fs::read_to_string(dir.join(CORPUS_FILE)) {
            Ok(text) => snap.load_records(&text, CORPUS_FILE)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        match fs::read_to_string(dir.join(LABELS_FILE)) {
            Ok(text) => snap.load_labels(&text, LABELS_FILE)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(snap)
    }
}

fn normalized_fields(r: &RepositoryRecord) -> String {
    let mut files = r.file_paths.clone();
    files.sort();
    let parts = [
        r.title.clone(),
        r.description.clone(),
        r.topics.join(" "),
        r.readme.clone(),
        files.join(" "),
    ];
    parts
        .iter()
        .map(|p| normalize_chars(p).split_whitespace().collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\u{1f}")
}

/// SHA-256 over normalized title, description, topics, README and sorted file paths.
pub fn content_hash(r: &RepositoryRecord) -> String {
    hex::encode(Sha256::digest(normalized_fields(r).as_bytes()))
}

/// Exclusive writer handle over a store directory.
#[derive(Debug)]
pub struct CorpusStore {
    dir: PathBuf,
    snapshot: CorpusSnapshot,
    lock: PathBuf,
}

impl CorpusStore {
    /// Opens (creating if needed) the store in `dir`, taking the writer lock.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let lock = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => writeln!(f, "{}", std::process::id())?,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => return Err(StoreError::Locked(dir)),
            Err(e) => return Err(e.into()),
        }
        let store = CorpusSnapshot::load_dir(&dir).map(|snapshot| Self { dir: dir.clone(), snapshot, lock: lock.clone() });
        if store.is_err() {
            let _ = fs::remove_file(&lock);
        }
        store
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot(&self) -> &CorpusSnapshot {
        &self.snapshot
    }

    /// Applies the upsert and appends the record to `corpus.jsonl` if it changed anything.
    pub fn upsert_record(&mut self, record: RepositoryRecord) -> Result<bool, StoreError> {
        let name = record.full_name.clone();
        let changed = self.snapshot.upsert(record)?;
        if changed {
            let stored = self.snapshot.get(&name).expect("just inserted");
            let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(CORPUS_FILE))?;
            writeln!(f, "{}", serde_json::to_string(stored).expect("record serializes"))?;
        }
        Ok(changed)
    }

    pub fn remove_exact_duplicates(&mut self) -> Result<Vec<String>, StoreError> {
        let removed = self.snapshot.remove_exact_duplicates();
        if !removed.is_empty() {
            self.compact()?;
        }
        Ok(removed)
    }

    pub fn replace_labels(&mut self, examples: &[LabeledExample]) -> Result<(), StoreError> {
        let mut next = self.snapshot.clone();
        next.labels.clear();
        for e in examples {
            next.set_label(&e.full_name, e.label)?;
        }
        self.snapshot = next;
        write_atomic(&self.dir.join(LABELS_FILE), labels::to_jsonl(examples).as_bytes())?;
        Ok(())
    }

    /// Rewrites `corpus.jsonl` to one sorted line per record.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        write_atomic(&self.dir.join(CORPUS_FILE), self.snapshot.records_to_jsonl().as_bytes())?;
        if !self.snapshot.labels.is_empty() || self.dir.join(LABELS_FILE).exists() {
            write_atomic(&self.dir.join(LABELS_FILE), self.snapshot.labels_to_jsonl().as_bytes())?;
        }
        Ok(())
    }
}

impl Drop for CorpusStore {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::test_support::record;
    use chrono::{Duration, NaiveDate};
    use proptest::prelude::*;

    #[test]
    fn upsert_idempotent_and_newest_wins() {
        let mut s = CorpusSnapshot::new();
        let r = record("a/zeus");
        assert!(s.upsert(r.clone()).unwrap());
        assert!(!s.upsert(r.clone()).unwrap());

        let mut newer = r.clone();
        newer.fetched_at += Duration::days(1);
        newer.star_count = 9;
        assert!(s.upsert(newer).unwrap());
        assert_eq!(s.get("a/zeus").unwrap().star_count, 9);

        let mut older = r.clone();
        older.star_count = 1;
        assert!(!s.upsert(older).unwrap());
        assert_eq!(s.get("a/zeus").unwrap().star_count, 9);
    }

    #[test]
    fn invalid_record_rejected() {
        let mut s = CorpusSnapshot::new();
        let mut r = record("a/b");
        r.created_at = NaiveDate::from_ymd_opt(2030, 1, 1).unwrap();
        assert!(matches!(s.upsert(r), Err(StoreError::Validation(_))));
    }

    #[test]
    fn tiers_merge_to_smallest() {
        let mut s = CorpusSnapshot::new();
        let mut r = record("a/b");
        r.query_tier = QueryTier::Q137;
        s.upsert(r.clone()).unwrap();
        r.query_tier = QueryTier::Q1;
        assert!(s.upsert(r).unwrap());
        assert_eq!(s.tier_membership("a/b").len(), 3);
        assert_eq!(s.export_tier(QueryTier::Q1).len(), 1);
    }

    #[test]
    fn export_tier_examples() {
        let mut s = CorpusSnapshot::new();
        assert!(s.export_tier(QueryTier::Q137).is_empty());
        let mut wide = record("a/only137");
        wide.query_tier = QueryTier::Q137;
        let mut core = record("a/malware");
        core.query_tier = QueryTier::Q1;
        s.upsert(wide).unwrap();
        s.upsert(core).unwrap();
        let names = |t| s.export_tier(t).iter().map(|r| r.full_name.clone()).collect::<Vec<_>>();
        assert_eq!(names(QueryTier::Q50), vec!["a/malware"]);
        assert_eq!(names(QueryTier::Q137).len(), 2);
        assert_eq!(names(QueryTier::Q1), vec!["a/malware"]);
    }

    fn mirror(name: &str) -> RepositoryRecord {
        let mut r = record(name);
        r.title = "Zeus Source".into();
        r.description = "Leaked zeus banking trojan".into();
        r.file_paths = vec!["b.c".into(), "a.c".into()];
        r
    }

    #[test]
    fn duplicate_groups() {
        let mut s = CorpusSnapshot::new();
        assert!(s.find_exact_duplicates().is_empty());
        s.upsert(mirror("x/zeus")).unwrap();
        let mut m2 = mirror("y/zeus");
        m2.title = "ZEUS source!".into();
        m2.file_paths.reverse();
        s.upsert(m2).unwrap();
        s.upsert(record("z/other")).unwrap();
        assert_eq!(s.find_exact_duplicates(), vec![vec!["x/zeus".to_string(), "y/zeus".to_string()]]);
        s.upsert(mirror("w/zeus")).unwrap();
        let groups = s.find_exact_duplicates();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].len(), 3);
        assert_eq!(s.remove_exact_duplicates(), vec!["x/zeus", "y/zeus"]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn near_duplicates_flagged_not_removed() {
        let mut s = CorpusSnapshot::new();
        s.upsert(mirror("x/zeus")).unwrap();
        let mut near = mirror("y/zeus");
        near.readme = "fork".into();
        s.upsert(near).unwrap();
        let pairs = s.near_duplicate_candidates(0.5);
        assert_eq!(pairs.len(), 1);
        assert!(s.find_exact_duplicates().is_empty());
    }

    #[test]
    fn labels_require_records() {
        let mut s = CorpusSnapshot::new();
        assert!(matches!(s.set_label("no/such", Class::Malware), Err(StoreError::UnknownRepo(_))));
    }

    #[test]
    fn store_appends_and_locks() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = CorpusStore::open(dir.path()).unwrap();
            assert!(matches!(CorpusStore::open(dir.path()), Err(StoreError::Locked(_))));
            assert!(store.upsert_record(record("a/b")).unwrap());
            assert!(!store.upsert_record(record("a/b")).unwrap());
            let mut newer = record("a/b");
            newer.fetched_at += Duration::hours(1);
            newer.star_count = 3;
            assert!(store.upsert_record(newer).unwrap());
            let text = fs::read_to_string(dir.path().join(CORPUS_FILE)).unwrap();
            assert_eq!(text.lines().count(), 2);
            store.compact().unwrap();
        }
        let snap = CorpusSnapshot::load_dir(dir.path()).unwrap();
        assert_eq!(snap.get("a/b").unwrap().star_count, 3);
        let text = fs::read_to_string(dir.path().join(CORPUS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 1);
        // Lock released on drop.
        CorpusStore::open(dir.path()).unwrap();
    }

    proptest! {
        #[test]
        fn jsonl_round_trip_is_byte_identical(stars in prop::collection::vec(0u64..1000, 1..12), tiers in prop::collection::vec(0usize..3, 12)) {
            let mut s = CorpusSnapshot::new();
            for (i, st) in stars.iter().enumerate() {
                let mut r = record(&format!("o{}/r{i}", i % 3));
                r.star_count = *st;
                r.topics = vec![format!("t{st}")];
                r.query_tier = QueryTier::ALL[tiers[i]];
                s.upsert(r).unwrap();
            }
            let first = s.records_to_jsonl();
            let mut back = CorpusSnapshot::new();
            back.load_records(&first, "mem").unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(back.records_to_jsonl(), first);
            let q1: HashSet<_> = s.export_tier(QueryTier::Q1).iter().map(|r| r.full_name.clone()).collect();
            let q50: HashSet<_> = s.export_tier(QueryTier::Q50).iter().map(|r| r.full_name.clone()).collect();
            let q137: HashSet<_> = s.export_tier(QueryTier::Q137).iter().map(|r| r.full_name.clone()).collect();
            prop_assert!(q1.is_subset(&q50) && q50.is_subset(&q137));
        }
    }
}
