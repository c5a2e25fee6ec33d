use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use repomine::corpus::{write_atomic, CorpusSnapshot, CorpusStore, StoreError, CORPUS_FILE, LABELS_FILE};
use repomine::eval::cross_validate_documents;
use repomine::featurize::select_vocabulary;
use repomine::harvester::api::{ArchiveApi, MockArchive, RemoteRepository};
use repomine::harvester::ratelimit::SharedLimiter;
use repomine::harvester::{Clock, Harvester, KeywordTiers, RankOrder, RateLimitPolicy, SimClock, SystemClock, TOKEN_ENV};
use repomine::nb::train;
use repomine::pipeline::{classify_records, malware_with_source, Classified, SourceEntry};
use repomine::srcdetect::SourceVerdict;
use repomine::taxonomy::TagAssignment;
use repomine::{analytics, synth, Class, EvalReport, NaiveBayesModel, RepositoryRecord, Vocabulary};

use crate::config::{Resources, RunConfig};
use crate::error::CliError;

pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const MODEL_FILE: &str = "model.json";
pub const EVAL_FILE: &str = "eval_report.json";
pub const MALWARE_FILE: &str = "malware.jsonl";
pub const SOURCE_FILE: &str = "source.jsonl";
pub const TAGS_FILE: &str = "tags.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const FIGURES_DIR: &str = "figures";

#[derive(Serialize, Deserialize)]
struct VocabularyArtifact {
    config_hash: String,
    vocabulary: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct ModelArtifact {
    config_hash: String,
    model: NaiveBayesModel,
}

#[derive(Serialize, Deserialize)]
struct EvalArtifact {
    config_hash: String,
    report: EvalReport,
}

#[derive(Serialize, Deserialize)]
struct ReportArtifact {
    config_hash: String,
    report: analytics::EcosystemReport,
}

/// One line of a JSONL artifact, stamped with the producing config.
#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    #[serde(flatten)]
    item: T,
    config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct MalwareLine {
    full_name: String,
    log_posterior_malware: f64,
}

#[derive(Serialize, Deserialize)]
struct SourceLine {
    full_name: String,
    #[serde(flatten)]
    verdict: SourceVerdict,
}

pub struct Workspace {
    dir: PathBuf,
    config: RunConfig,
    resources: Resources,
    hash: String,
}

fn io_err<'a>(stage: &'static str, path: &'a Path) -> impl Fn(io::Error) -> CliError + 'a {
    move |e| CliError::runtime(stage, format!("{}: {e}", path.display()))
}

fn store_err(stage: &'static str, e: StoreError) -> CliError {
    match e {
        StoreError::Io(e) => CliError::runtime(stage, e),
        StoreError::Parse { ref file, .. } => CliError::invalid(stage, &file.clone(), e),
        StoreError::UnknownRepo(_) => CliError::invalid(stage, LABELS_FILE, e),
        StoreError::Locked(_) => CliError::runtime(stage, e),
        StoreError::Validation(_) => CliError::invalid(stage, CORPUS_FILE, e),
    }
}

fn to_remote(r: RepositoryRecord) -> RemoteRepository {
    RemoteRepository {
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
    }
}

impl Workspace {
    pub fn new(dir: PathBuf, config: RunConfig) -> Result<Self, CliError> {
        let resources = config.resources(&dir)?;
        resources.lexicon()?;
        let hash = config.pipeline_hash(&resources);
        Ok(Self { dir, config, resources, hash })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, stage: &'static str, name: &str, hint: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::invalid(stage, name, format!("missing from {}; {hint}", self.dir.display())))
        }
    }

    fn write(&self, stage: &'static str, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir).map_err(io_err(stage, &self.dir))?;
        let p = self.path(name);
        write_atomic(&p, bytes).map_err(io_err(stage, &p))
    }

    fn write_json(&self, stage: &'static str, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(stage, name, text.as_bytes())
    }

    fn write_jsonl<T: Serialize>(&self, stage: &'static str, name: &str, items: Vec<T>, hash: &str) -> Result<(), CliError> {
        let mut text = String::new();
        for item in items {
            let line = Stamped { item, config_hash: hash.to_string() };
            text.push_str(&serde_json::to_string(&line).expect("artifact serializes"));
            text.push('\n');
        }
        self.write(stage, name, text.as_bytes())
    }

    fn check_hash(&self, stage: &'static str, name: &str, found: &str) -> Result<(), CliError> {
        if found == self.hash {
            Ok(())
        } else {
            Err(CliError::invalid(
                stage,
                name,
                format!("produced under config {found}, current config is {}; rerun the producing stage", self.hash),
            ))
        }
    }

    fn read_json<T: DeserializeOwned>(&self, stage: &'static str, name: &str, hint: &str) -> Result<T, CliError> {
        let p = self.require(stage, name, hint)?;
        let text = fs::read_to_string(&p).map_err(io_err(stage, &p))?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid(stage, name, e))
    }

    fn read_jsonl<T: DeserializeOwned>(&self, stage: &'static str, name: &str, hint: &str) -> Result<Vec<T>, CliError> {
        let p = self.require(stage, name, hint)?;
        let text = fs::read_to_string(&p).map_err(io_err(stage, &p))?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let s: Stamped<T> =
                serde_json::from_str(line).map_err(|e| CliError::invalid(stage, name, format!("line {}: {e}", i + 1)))?;
            self.check_hash(stage, name, &s.config_hash)?;
            out.push(s.item);
        }
        Ok(out)
    }

    fn corpus(&self, stage: &'static str) -> Result<CorpusSnapshot, CliError> {
        self.require(stage, CORPUS_FILE, "run `repomine harvest` first")?;
        CorpusSnapshot::load_dir(&self.dir).map_err(|e| store_err(stage, e))
    }

    /// Corpus records of the configured tier, sorted by name.
    fn tier_records(&self, snap: &CorpusSnapshot) -> Vec<RepositoryRecord> {
        snap.export_tier(self.config.tier).into_iter().cloned().collect()
    }

    fn labeled_docs(&self, stage: &'static str) -> Result<Vec<(repomine::textprep::TokenizedRepo, Class)>, CliError> {
        let snap = self.corpus(stage)?;
        self.require(stage, LABELS_FILE, "export ground truth from `repomine label-serve` first")?;
        let pre = self.resources.preprocessor();
        let docs: Vec<_> = self
            .tier_records(&snap)
            .iter()
            .filter_map(|r| snap.labels().get(&r.full_name).map(|c| (pre.process_record(r), *c)))
            .collect();
        for class in Class::ALL {
            if !docs.iter().any(|(_, c)| *c == class) {
                return Err(CliError::invalid(
                    stage,
                    LABELS_FILE,
                    format!("no {class:?} examples within tier {}", self.config.tier),
                ));
            }
        }
        Ok(docs)
    }

    pub fn harvest(&self, mock: Option<&Path>, live: bool, workers: usize) -> Result<(), CliError> {
        const STAGE: &str = "harvest";
        let keywords = self.dir.join(&self.config.paths.keywords);
        let tiers = KeywordTiers::load(&keywords)
            .map_err(|e| CliError::invalid(STAGE, "paths.keywords", format!("{}: {e}", keywords.display())))?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.trim().is_empty());
        let policy = RateLimitPolicy::for_token(token.as_deref());

        let (api, clock): (Box<dyn ArchiveApi>, Arc<dyn Clock>) = match (mock, live) {
            (Some(path), _) => {
                let path = self.dir.join(path);
                let text = fs::read_to_string(&path).map_err(|e| CliError::invalid(STAGE, "mock", e))?;
                let repos = text
                    .lines()
                    .enumerate()
                    .filter(|(_, l)| !l.trim().is_empty())
                    .map(|(i, l)| {
                        serde_json::from_str::<RemoteRepository>(l)
                            .or_else(|_| serde_json::from_str::<RepositoryRecord>(l).map(to_remote))
                            .map_err(|e| CliError::invalid(STAGE, "mock", format!("line {}: {e}", i + 1)))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                // The mock answers instantly, so a virtual clock keeps the run fast.
                (Box::new(MockArchive::new(repos)), Arc::new(SimClock::default()))
            }
            (None, true) => (live_archive()?, Arc::new(SystemClock)),
            (None, false) => return Err(CliError::invalid(STAGE, "source", "pass --mock FILE or --live")),
        };
        let limiter = SharedLimiter::new(policy, clock);
        let harvester = Harvester::new(api.as_ref(), &limiter);
        let outcome = harvester
            .harvest(&tiers, self.config.tier, &RankOrder::ALL, workers.max(1))
            .map_err(|e| CliError::runtime(STAGE, e))?;

        let mut store = CorpusStore::open(&self.dir).map_err(|e| store_err(STAGE, e))?;
        let mut changed = 0;
        for r in outcome.records {
            if store.upsert_record(r).map_err(|e| store_err(STAGE, e))? {
                changed += 1;
            }
        }
        store.compact().map_err(|e| store_err(STAGE, e))?;
        println!(
            "harvest: {} repositories in corpus ({changed} new or updated, {} gone, {} pathological skipped)",
            store.snapshot().len(),
            outcome.gone.len(),
            outcome.pathological.len()
        );
        Ok(())
    }

    pub fn dedup(&self, near: Option<f64>) -> Result<(), CliError> {
        const STAGE: &str = "dedup";
        if let Some(t) = near {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::invalid(STAGE, "near", "must be within [0, 1]"));
            }
        }
        self.require(STAGE, CORPUS_FILE, "run `repomine harvest` first")?;
        let mut store = CorpusStore::open(&self.dir).map_err(|e| store_err(STAGE, e))?;
        let removed = store.remove_exact_duplicates().map_err(|e| store_err(STAGE, e))?;
        for name in &removed {
            println!("removed {name}");
        }
        if let Some(t) = near {
            for (a, b, j) in store.snapshot().near_duplicate_candidates(t) {
                println!("near-duplicate {a} {b} {j:.3}");
            }
        }
        println!("dedup: {} removed, {} remain", removed.len(), store.snapshot().len());
        Ok(())
    }

    pub fn label_serve(&self, judges: Vec<String>, quorum: usize, addr: SocketAddr, ui: Option<PathBuf>) -> Result<(), CliError> {
        const STAGE: &str = "label-serve";
        let seed = self.config.require_seed(STAGE)?;
        self.require(STAGE, CORPUS_FILE, "run `repomine harvest` first")?;
        let mut cfg = labelsvc::ServiceConfig::new(&self.dir, judges);
        cfg.quorum = quorum;
        cfg.seed = seed;
        let service = labelsvc::LabelService::open(cfg).map_err(|e| match e {
            labelsvc::ServiceError::Io(e) => CliError::runtime(STAGE, e),
            other => CliError::invalid(STAGE, "judges", other),
        })?;
        let service = Arc::new(service);
        let ui = ui.map(|d| self.dir.join(d));
        let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(STAGE, e))?;
        rt.block_on(async {
            let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::runtime(STAGE, e))?;
            println!("label-serve: http://{}", listener.local_addr().map_err(|e| CliError::runtime(STAGE, e))?);
            let shutdown = async {
                let _ = tokio::signal::ctrl_c().await;
            };
            labelsvc::serve(listener, service.clone(), ui.as_deref(), shutdown)
                .await
                .map_err(|e| CliError::runtime(STAGE, e))
        })?;
        let text = service.export().map_err(|e| CliError::runtime(STAGE, e))?;
        println!("label-serve: {} labeled repositories in {LABELS_FILE}", text.lines().count());
        Ok(())
    }

    pub fn train(&self) -> Result<(), CliError> {
        const STAGE: &str = "train";
        let docs = self.labeled_docs(STAGE)?;
        let budgets = self.config.budgets.to_field_budgets();
        let vocab: Vocabulary =
            select_vocabulary(&docs, &budgets, self.config.weighting).map_err(|e| CliError::invalid(STAGE, LABELS_FILE, e))?;
        let training: Vec<_> = docs.iter().map(|(r, c)| (vocab.vectorize("", r), *c)).collect();
        let model = train(&training, self.config.alpha)
            .map_err(|e| CliError::invalid(STAGE, "alpha", e))?
            .with_vocabulary_hash(vocab.content_hash());
        println!("train: {} examples, {} of {} slots filled", docs.len(), vocab.selected(), vocab.width());
        self.write_json(STAGE, VOCABULARY_FILE, &VocabularyArtifact { config_hash: self.hash.clone(), vocabulary: vocab })?;
        self.write_json(STAGE, MODEL_FILE, &ModelArtifact { config_hash: self.hash.clone(), model })
    }

    pub fn evaluate(&self) -> Result<(), CliError> {
        const STAGE: &str = "evaluate";
        let seed = self.config.require_seed(STAGE)?;
        let docs = self.labeled_docs(STAGE)?;
        let report = cross_validate_documents(
            &docs,
            &self.config.budgets.to_field_budgets(),
            self.config.weighting,
            self.config.folds,
            self.config.alpha,
            seed,
        )
        .map_err(|e| CliError::invalid(STAGE, "folds", e))?;
        for c in &report.per_class {
            println!(
                "evaluate: {:?} precision {:.3} recall {:.3} f1 {:.3}",
                c.class, c.metrics.precision, c.metrics.recall, c.metrics.f1
            );
        }
        let config_hash = self.config.evaluation_hash(&self.resources);
        self.write_json(STAGE, EVAL_FILE, &EvalArtifact { config_hash, report })
    }

    fn load_model(&self, stage: &'static str) -> Result<(Vocabulary, NaiveBayesModel), CliError> {
        let hint = "run `repomine train` first";
        let v: VocabularyArtifact = self.read_json(stage, VOCABULARY_FILE, hint)?;
        self.check_hash(stage, VOCABULARY_FILE, &v.config_hash)?;
        let m: ModelArtifact = self.read_json(stage, MODEL_FILE, hint)?;
        self.check_hash(stage, MODEL_FILE, &m.config_hash)?;
        Ok((v.vocabulary, m.model))
    }

    pub fn classify(&self) -> Result<(), CliError> {
        const STAGE: &str = "classify";
        let (vocab, model) = self.load_model(STAGE)?;
        let snap = self.corpus(STAGE)?;
        let records = self.tier_records(&snap);
        let pre = self.resources.preprocessor();
        let classified =
            classify_records(&model, &vocab, &pre, &records).map_err(|e| CliError::invalid(STAGE, MODEL_FILE, e))?;
        let malware: Vec<MalwareLine> = classified
            .into_iter()
            .filter(|c| c.class == Class::Malware)
            .map(|c| MalwareLine { full_name: c.full_name, log_posterior_malware: c.log_posterior_malware })
            .collect();
        println!("classify: {} of {} repositories classified as malware", malware.len(), records.len());
        self.write_jsonl(STAGE, MALWARE_FILE, malware, &self.hash)
    }

    /// Corpus records of the repositories listed in malware.jsonl.
    fn malware_records(&self, stage: &'static str, snap: &CorpusSnapshot) -> Result<Vec<RepositoryRecord>, CliError> {
        let lines: Vec<MalwareLine> = self.read_jsonl(stage, MALWARE_FILE, "run `repomine classify` first")?;
        lines
            .iter()
            .map(|l| {
                snap.get(&l.full_name)
                    .cloned()
                    .ok_or_else(|| CliError::invalid(stage, MALWARE_FILE, format!("{} is not in the corpus", l.full_name)))
            })
            .collect()
    }

    pub fn detect_source(&self) -> Result<(), CliError> {
        const STAGE: &str = "detect-source";
        let snap = self.corpus(STAGE)?;
        let records = self.malware_records(STAGE, &snap)?;
        let classified: Vec<Classified> = records
            .iter()
            .map(|r| Classified { full_name: r.full_name.clone(), class: Class::Malware, log_posterior_malware: 0.0 })
            .collect();
        let kept: Vec<SourceLine> = malware_with_source(&classified, &records, &self.config.source_config()?)
            .into_iter()
            .map(|SourceEntry { full_name, verdict }| SourceLine { full_name, verdict })
            .collect();
        println!("detect-source: {} of {} malware repositories contain source code", kept.len(), records.len());
        self.write_jsonl(STAGE, SOURCE_FILE, kept, &self.hash)
    }

    pub fn tag(&self) -> Result<(), CliError> {
        const STAGE: &str = "tag";
        let snap = self.corpus(STAGE)?;
        let records = self.malware_records(STAGE, &snap)?;
        let lexicon = self.resources.lexicon()?;
        let pre = self.resources.preprocessor();
        let tags: Vec<TagAssignment> =
            records.iter().map(|r| lexicon.tag_repository(&r.full_name, &pre.process_record(r))).collect();
        let typed = tags.iter().filter(|t| !t.types.is_empty()).count();
        println!("tag: {typed} of {} repositories carry a malware type", tags.len());
        self.write_jsonl(STAGE, TAGS_FILE, tags, &self.hash)
    }

    pub fn report(&self, top_k: usize) -> Result<(), CliError> {
        const STAGE: &str = "report";
        let snap = self.corpus(STAGE)?;
        let records = self.malware_records(STAGE, &snap)?;
        let tags: Vec<TagAssignment> = self.read_jsonl(STAGE, TAGS_FILE, "run `repomine tag` first")?;
        let tagged: BTreeSet<&str> = tags.iter().map(|t| t.repo_name.as_str()).collect();
        let listed: BTreeSet<&str> = records.iter().map(|r| r.full_name.as_str()).collect();
        if tagged != listed {
            return Err(CliError::invalid(STAGE, TAGS_FILE, "does not cover the repositories in malware.jsonl; rerun tag"));
        }
        if records.is_empty() {
            return Err(CliError::invalid(STAGE, MALWARE_FILE, "no malware repositories to report on"));
        }
        let lexicon = self.resources.lexicon()?;
        let report = analytics::ecosystem_report(&records, &tags, &lexicon, top_k);
        let figures = self.path(FIGURES_DIR);
        let written = analytics::write_figures(&report, &figures).map_err(io_err(STAGE, &figures))?;
        println!("report: {} repositories, {} authors, {} figure files", report.repositories, report.authors, written.len());
        self.write_json(STAGE, REPORT_FILE, &ReportArtifact { config_hash: self.hash.clone(), report })
    }

    pub fn synth(&self, per_class: usize) -> Result<(), CliError> {
        const STAGE: &str = "synth";
        let seed = self.config.require_seed(STAGE)?;
        if per_class == 0 {
            return Err(CliError::invalid(STAGE, "per-class", "must be positive"));
        }
        let mut snap = CorpusSnapshot::new();
        let mut labels: HashMap<String, Class> = HashMap::new();
        for (r, c) in synth::synthetic_corpus(seed, per_class) {
            labels.insert(r.full_name.clone(), c);
            snap.upsert(r).map_err(|e| store_err(STAGE, e))?;
        }
        for (name, c) in labels {
            snap.set_label(&name, c).map_err(|e| store_err(STAGE, e))?;
        }
        self.write(STAGE, CORPUS_FILE, snap.records_to_jsonl().as_bytes())?;
        self.write(STAGE, LABELS_FILE, snap.labels_to_jsonl().as_bytes())?;
        println!("synth: {} labeled repositories", snap.len());
        Ok(())
    }
}

#[cfg(feature = "live")]
fn live_archive() -> Result<Box<dyn ArchiveApi>, CliError> {
    let api = repomine::harvester::live::HttpArchive::from_env().map_err(|e| CliError::runtime("harvest", e))?;
    Ok(Box::new(api))
}

#[cfg(not(feature = "live"))]
fn live_archive() -> Result<Box<dyn ArchiveApi>, CliError> {
    Err(CliError::invalid("harvest", "live", "this build has no network client; rebuild with `--features live`"))
}
