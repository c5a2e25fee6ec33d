//! Acceptance suite. Each check prints one PASS/FAIL line; the process exits
//! non-zero when any check fails.
//!
//! The reference computations here are written against raw data (document
//! scans, exact rationals, explicit window counting) and share no code with
//! the routines under test beyond the public data types.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repomine::corpus::CorpusSnapshot;
use repomine::eval::cross_validate_documents;
use repomine::featurize::{chi_square, default_budgets, select_vocabulary, FeatureVector, WeightingMode};
use repomine::harvester::api::{MockArchive, RemoteRepository};
use repomine::harvester::ratelimit::{PermitSource, SharedLimiter};
use repomine::harvester::{Harvester, KeywordTiers, RankOrder, RateLimitPolicy, SimClock};
use repomine::nb::train;
use repomine::pipeline::{classify_records, malware_with_source};
use repomine::srcdetect::{detect, SourceDetectConfig};
use repomine::synth::fixture_corpus;
use repomine::taxonomy::{build_matrix, TagLexicon};
use repomine::textprep::{stem, FieldKind, Preprocessor, TokenizedRepo};
use repomine::{analytics, Class, QueryTier};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn budgeted(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- chi-square

fn oracle_chi_square(docs: &[(Vec<u32>, bool)], word: u32) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0i64, 0i64, 0i64, 0i64);
    for (words, malware) in docs {
        match (words.contains(&word), malware) {
            (true, true) => a += 1,
            (true, false) => b += 1,
            (false, true) => c += 1,
            (false, false) => d += 1,
        }
    }
    let den = (a + b) * (c + d) * (a + c) * (b + d);
    if den == 0 {
        return 0.0;
    }
    let n = a + b + c + d;
    let num = BigInt::from(n) * BigInt::from(a * d - b * c).pow(2);
    BigRational::new(num, BigInt::from(den)).to_f64().expect("finite")
}

fn chi_square_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for _ in 0..500 {
        let n_docs = rng.random_range(2..=20);
        let n_words = rng.random_range(1..=10u32);
        let mut docs: Vec<(Vec<u32>, bool)> = (0..n_docs)
            .map(|_| ((0..n_words).filter(|_| rng.random_bool(0.4)).collect(), rng.random_bool(0.5)))
            .collect();
        docs[0].1 = true;
        docs[1].1 = false;
        let labeled: Vec<(TokenizedRepo, Class)> = docs
            .iter()
            .map(|(ws, m)| {
                let mut r = TokenizedRepo::new();
                r.set(FieldKind::Description, ws.iter().map(|w| format!("w{w}")).collect());
                (r, if *m { Class::Malware } else { Class::Benign })
            })
            .collect();
        for w in 0..n_words {
            let got: f64 = chi_square(&format!("w{w}"), FieldKind::Description, &labeled).map_err(|e| e.to_string())?;
            let want = oracle_chi_square(&docs, w);
            worst = worst.max((got - want).abs());
            compared += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("max |Δ| = {worst:e}"))?;
    budgeted(Duration::from_secs(5), start)?;
    Ok(format!("{compared} scores, max |Δ| = {worst:e}"))
}

// ---------------------------------------------------------------- naive Bayes

/// Smoothed class priors and per-slot likelihoods, computed exactly.
fn oracle_params(docs: &[(Vec<u32>, bool)], alpha: &BigRational, w: usize) -> [(BigRational, Vec<BigRational>); 2] {
    let n = BigInt::from(docs.len());
    [true, false].map(|class| {
        let members: Vec<&Vec<u32>> = docs.iter().filter(|(_, m)| *m == class).map(|(v, _)| v).collect();
        let prior = BigRational::new(BigInt::from(members.len()), n.clone());
        let total: u32 = members.iter().flat_map(|v| v.iter()).sum();
        let den = BigRational::from_integer(BigInt::from(total)) + alpha * BigRational::from_integer(BigInt::from(w));
        let theta = (0..w)
            .map(|i| {
                let count: u32 = members.iter().map(|v| v[i]).sum();
                (BigRational::from_integer(BigInt::from(count)) + alpha) / &den
            })
            .collect();
        (prior, theta)
    })
}

/// Posterior log-probabilities of `x` under exact parameters.
fn oracle_posterior(params: &[(BigRational, Vec<BigRational>); 2], x: &[u32]) -> [f64; 2] {
    let joint = params.clone().map(|(mut p, theta)| {
        for (t, &xi) in theta.iter().zip(x) {
            for _ in 0..xi {
                p *= t;
            }
        }
        p
    });
    let z = &joint[0] + &joint[1];
    [0, 1].map(|c| (&joint[c] / &z).to_f64().expect("finite").ln())
}

fn check_model(docs: &[(Vec<u32>, bool)], alpha: (i64, i64), queries: &[Vec<u32>], worst: &mut f64) -> Result<(), String> {
    let examples: Vec<(FeatureVector<f64>, Class)> = docs
        .iter()
        .map(|(v, m)| {
            let fv = FeatureVector { repo_name: String::new(), values: v.iter().map(|&c| c as f64).collect() };
            (fv, if *m { Class::Malware } else { Class::Benign })
        })
        .collect();
    let model = train(&examples, alpha.0 as f64 / alpha.1 as f64).map_err(|e| e.to_string())?;
    let alpha = BigRational::new(BigInt::from(alpha.0), BigInt::from(alpha.1));
    let params = oracle_params(docs, &alpha, model.width());
    for q in queries {
        let fv = FeatureVector { repo_name: String::new(), values: q.iter().map(|&c| c as f64).collect() };
        let got = model.predict(&fv).map_err(|e| e.to_string())?.log_posterior();
        let want = oracle_posterior(&params, q);
        for c in 0..2 {
            *worst = worst.max((got[c] - want[c]).abs());
        }
    }
    Ok(())
}

/// Every vector of length `w` with entries in `0..=max`.
fn all_vectors(w: usize, max: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..w {
        out = out.into_iter().flat_map(|v| (0..=max).map(move |c| [v.clone(), vec![c]].concat())).collect();
    }
    out
}

fn nb_exactness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut models = 0usize;
    // Exhaustive over the smallest shapes: every count table and labeling
    // with both classes present, queried with every vector.
    for (w, n_docs) in [(1usize, 2usize), (1, 3), (1, 4), (2, 2), (2, 3)] {
        let vectors = all_vectors(w, 3);
        let tables = all_vectors(n_docs * w, 3);
        for labels in 1..(1u32 << n_docs) - 1 {
            for table in &tables {
                let docs: Vec<(Vec<u32>, bool)> =
                    (0..n_docs).map(|d| (table[d * w..(d + 1) * w].to_vec(), labels >> d & 1 == 1)).collect();
                check_model(&docs, (1, 1), &vectors, &mut worst)?;
                models += 1;
            }
        }
    }
    // Seeded sample over the full range W ≤ 5, ≤ 8 documents, counts ≤ 3.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..3000 {
        let w = rng.random_range(1..=5);
        let n_docs = rng.random_range(2..=8);
        let mut docs: Vec<(Vec<u32>, bool)> = (0..n_docs)
            .map(|_| ((0..w).map(|_| rng.random_range(0..=3)).collect(), rng.random_bool(0.5)))
            .collect();
        docs[0].1 = true;
        docs[1].1 = false;
        let queries: Vec<Vec<u32>> = (0..8).map(|_| (0..w).map(|_| rng.random_range(0..=3)).collect()).collect();
        let alpha = [(1, 1), (1, 2), (2, 1)][rng.random_range(0..3)];
        check_model(&docs, alpha, &queries, &mut worst)?;
        models += 1;
    }
    ensure(worst <= 1e-9, || format!("max |Δ| = {worst:e}"))?;
    budgeted(Duration::from_secs(30), start)?;
    Ok(format!("{models} models, max |Δ| = {worst:e}"))
}

// ---------------------------------------------------------------- feature budget

fn feature_budget() -> Outcome {
    let budgets = default_budgets();
    let total: usize = budgets.iter().map(|b| b.k).sum();
    ensure(total == 550, || format!("budgets sum to {total}"))?;

    // 9253 distinct words spread over the five fields.
    let per_field = [(FieldKind::Title, 1000), (FieldKind::Topics, 500), (FieldKind::Description, 4000), (FieldKind::FileNames, 2753), (FieldKind::Readme, 1000)];
    let distinct: usize = per_field.iter().map(|(_, n)| n).sum();
    ensure(distinct == 9253, || format!("fixture has {distinct} words"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut labeled = Vec::new();
    for d in 0..200 {
        let mut repo = TokenizedRepo::new();
        for (f, (kind, n)) in per_field.iter().enumerate() {
            // word i of a field appears in document i mod 200, plus noise
            let mut words: Vec<String> = (0..*n).filter(|i| i % 200 == d).map(|i| format!("f{f}w{i}")).collect();
            words.extend((0..5).map(|_| format!("f{f}w{}", rng.random_range(0..*n))));
            repo.set(*kind, words);
        }
        labeled.push((repo, if d % 2 == 0 { Class::Malware } else { Class::Benign }));
    }
    let vocab = select_vocabulary::<f64>(&labeled, &budgets, WeightingMode::Count).map_err(|e| e.to_string())?;
    ensure(vocab.selected() == 550, || format!("selected {}", vocab.selected()))?;
    ensure(vocab.width() == 550, || format!("width {}", vocab.width()))?;
    let v = vocab.vectorize("x", &labeled[0].0);
    ensure(v.width() == 550, || format!("vector width {}", v.width()))?;

    // A sparse corpus still yields 550-wide vectors.
    let small = &labeled[..2];
    let sparse = select_vocabulary::<f64>(small, &budgets, WeightingMode::Count).map_err(|e| e.to_string())?;
    ensure(sparse.vectorize("x", &small[0].0).width() == 550, || "sparse vector width".into())?;
    Ok("550 slots (30+10+400+100+10) from 9253 distinct words".into())
}

// ---------------------------------------------------------------- end to end

fn fixture_docs(pre: &Preprocessor) -> Vec<(TokenizedRepo, Class)> {
    fixture_corpus().iter().map(|(r, c)| (pre.process_record(r), *c)).collect()
}

/// Plain bag-of-words multinomial Bayes over every token of every field,
/// evaluated on interleaved folds.
fn oracle_separability(docs: &[(TokenizedRepo, Class)], folds: usize) -> f64 {
    let bag = |r: &TokenizedRepo| -> Vec<String> {
        r.iter().flat_map(|(k, ts)| ts.iter().map(move |t| format!("{}:{t}", k.as_str()))).collect()
    };
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for fold in 0..folds {
        let mut counts: [HashMap<String, f64>; 2] = [HashMap::new(), HashMap::new()];
        let mut n = [0.0f64; 2];
        let mut vocab = BTreeSet::new();
        for (i, (r, c)) in docs.iter().enumerate() {
            if i % folds == fold {
                continue;
            }
            n[c.index()] += 1.0;
            for t in bag(r) {
                *counts[c.index()].entry(t.clone()).or_default() += 1.0;
                vocab.insert(t);
            }
        }
        let totals = [0, 1].map(|c| counts[c].values().sum::<f64>());
        let v = vocab.len() as f64;
        for (i, (r, c)) in docs.iter().enumerate() {
            if i % folds != fold {
                continue;
            }
            let score = |k: usize| {
                (n[k] / (n[0] + n[1])).ln()
                    + bag(r)
                        .iter()
                        .filter(|t| vocab.contains(*t))
                        .map(|t| ((counts[k].get(t).copied().unwrap_or(0.0) + 1.0) / (totals[k] + v)).ln())
                        .sum::<f64>()
            };
            let predicted_malware = score(0) > score(1);
            match (predicted_malware, *c == Class::Malware) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let pre = Preprocessor::default();
    let docs = fixture_docs(&pre);
    let malware = docs.iter().filter(|(_, c)| *c == Class::Malware).count();
    ensure(docs.len() == 120 && malware == 60, || format!("{} repos, {malware} malware", docs.len()))?;
    let oracle_f1 = oracle_separability(&docs, 10);
    ensure(oracle_f1 >= 0.90, || format!("fixture not separable: reference F1 {oracle_f1:.3}"))?;
    let report = cross_validate_documents::<f64>(&docs, &default_budgets(), WeightingMode::Count, 10, 1.0, 7)
        .map_err(|e| e.to_string())?;
    let f1 = report.class(Class::Malware).metrics.f1;
    ensure(f1 >= 0.90, || format!("malware F1 {f1:.3}"))?;
    budgeted(Duration::from_secs(10), start)?;
    Ok(format!("malware F1 {f1:.3} (reference {oracle_f1:.3})"))
}

// ---------------------------------------------------------------- source boundary

fn source_boundary() -> Outcome {
    let config = SourceDetectConfig::default();
    let four_of_five = detect(&["a.c", "b.c", "c.py", "d.asm", "notes.md"], &config);
    let three_of_four = detect(&["a.c", "b.c", "c.py", "notes.md"], &config);
    ensure(four_of_five.is_source && four_of_five.source_ratio == 0.8, || format!("{four_of_five:?}"))?;
    ensure(!three_of_four.is_source && three_of_four.source_ratio == 0.75, || format!("{three_of_four:?}"))?;
    Ok("4/5 detected, 3/4 not detected".into())
}

// ---------------------------------------------------------------- rate limiter

fn rate_limiter() -> Outcome {
    let clock = Arc::new(SimClock::default());
    let limiter = SharedLimiter::new(RateLimitPolicy::authenticated(), clock.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        // bursts of back-to-back calls mixed with idle gaps
        if rng.random_bool(0.1) {
            clock.advance(Duration::from_millis(rng.random_range(0..90_000)));
        }
        limiter.acquire();
    }
    let grants = limiter.grants();
    ensure(grants.len() == 500, || format!("{} grants", grants.len()))?;
    let window = Duration::from_secs(60);
    let mut worst = 0;
    for &t in &grants {
        let inside = grants.iter().filter(|&&g| g >= t && g < t + window).count();
        worst = worst.max(inside);
    }
    ensure(worst <= 30, || format!("{worst} grants in one 60 s window"))?;
    Ok(format!("busiest 60 s window holds {worst} grants"))
}

// ---------------------------------------------------------------- pipeline subset

fn pipeline_subset() -> Outcome {
    let pre = Preprocessor::default();
    let fixture = fixture_corpus();
    let docs = fixture_docs(&pre);
    let vocab = select_vocabulary::<f64>(&docs, &default_budgets(), WeightingMode::Count).map_err(|e| e.to_string())?;
    let training: Vec<_> = docs.iter().map(|(r, c)| (vocab.vectorize("", r), *c)).collect();
    let model = train(&training, 1.0).map_err(|e| e.to_string())?.with_vocabulary_hash(vocab.content_hash());
    let records: Vec<_> = fixture.iter().map(|(r, _)| r.clone()).collect();
    let classified = classify_records(&model, &vocab, &pre, &records).map_err(|e| e.to_string())?;
    let with_source = malware_with_source(&classified, &records, &SourceDetectConfig::default());

    let corpus: BTreeSet<&str> = records.iter().map(|r| r.full_name.as_str()).collect();
    let malware: BTreeSet<&str> =
        classified.iter().filter(|c| c.class == Class::Malware).map(|c| c.full_name.as_str()).collect();
    let source: BTreeSet<&str> = with_source.iter().map(|e| e.full_name.as_str()).collect();
    ensure(malware.is_subset(&corpus), || "malware set escapes the corpus".into())?;
    ensure(source.is_subset(&malware), || format!("{:?} not classified as malware", source.difference(&malware)))?;
    ensure(!source.is_empty() && source.len() < malware.len(), || {
        format!("degenerate sets: {} malware, {} with source", malware.len(), source.len())
    })?;
    Ok(format!("{} ⊇ {} ⊇ {}", corpus.len(), malware.len(), source.len()))
}

// ---------------------------------------------------------------- analytics

/// Cell counts by rescanning every repository's tokens for every
/// (type, platform) pair against the raw taxonomy keywords.
fn rescan_matrix(docs: &[TokenizedRepo]) -> Result<Vec<Vec<u64>>, String> {
    let file: serde_json::Value =
        serde_json::from_str(repomine::taxonomy::DEFAULT_TAXONOMY).map_err(|e| e.to_string())?;
    let stems = |cat: &serde_json::Value| -> BTreeSet<String> {
        let mut words = vec![cat["name"].as_str().unwrap_or_default().to_string()];
        words.extend(cat["keywords"].as_array().into_iter().flatten().filter_map(|k| k.as_str()).map(String::from));
        words.iter().map(|w| stem(&w.to_lowercase())).collect()
    };
    let negative: BTreeSet<String> = file["negative"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|w| w.as_str())
        .map(|w| stem(&w.to_lowercase()))
        .collect();
    let mentions = |repo: &TokenizedRepo, keys: &BTreeSet<String>| {
        repo.iter().flat_map(|(_, ts)| ts.iter()).any(|t| {
            !negative.contains(t) && (keys.contains(t) || t.split(['-', '_']).any(|p| keys.contains(p)))
        })
    };
    let cats = |key: &str| file[key].as_array().cloned().unwrap_or_default();
    let mut cells = Vec::new();
    for ty in cats("types") {
        let tk = stems(&ty);
        let mut row = Vec::new();
        for pl in cats("platforms") {
            let pk = stems(&pl);
            row.push(docs.iter().filter(|r| mentions(r, &tk) && mentions(r, &pk)).count() as u64);
        }
        cells.push(row);
    }
    Ok(cells)
}

fn analytics_exact() -> Outcome {
    let series = analytics::ccdf::<f64>(&[1, 1, 2, 4]).map_err(|e| e.to_string())?;
    ensure(series.points == vec![(1, 1.0), (2, 0.5), (4, 0.25)], || format!("ccdf {:?}", series.points))?;

    let x: Vec<f64> = (0..40).map(|i| (i * i % 17) as f64 + 0.5 * i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
    let r = analytics::pearson(&x, &y).map_err(|e| e.to_string())?.r;
    ensure((r - 1.0).abs() <= 1e-12, || format!("pearson r = {r}"))?;

    let pre = Preprocessor::default();
    let lexicon = TagLexicon::default();
    let fixture = fixture_corpus();
    let sample: Vec<_> = fixture.iter().take(50).map(|(r, _)| (r.full_name.clone(), pre.process_record(r))).collect();
    let tags: Vec<_> = sample.iter().map(|(n, r)| lexicon.tag_repository(n, r)).collect();
    let matrix = build_matrix(&lexicon, &tags);
    let docs: Vec<TokenizedRepo> = sample.into_iter().map(|(_, r)| r).collect();
    let expected = rescan_matrix(&docs)?;
    ensure(matrix.cells == expected, || format!("matrix {:?} != rescan {:?}", matrix.cells, expected))?;
    let nonzero = expected.iter().flatten().filter(|&&c| c > 0).count();
    ensure(nonzero > 0, || "rescan found no tagged repositories".into())?;
    Ok(format!("ccdf and pearson exact; 50-repo matrix matches rescan ({nonzero} non-empty cells)"))
}

// ---------------------------------------------------------------- tier subset

fn tier_subset() -> Outcome {
    let repos: Vec<RemoteRepository> = fixture_corpus()
        .into_iter()
        .map(|(r, _)| RemoteRepository {
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
        })
        .collect();
    let api = MockArchive::new(repos);
    let tiers = KeywordTiers::from_lists(
        "keylogger\n",
        "keylogger\nbackdoor\nbotnet\n",
        "keylogger\nbackdoor\nbotnet\ntrojan\nrootkit\nransomware\ntutorial\n",
    );
    let limiter = SharedLimiter::new(RateLimitPolicy::authenticated(), Arc::new(SimClock::default()));
    let harvester = Harvester::new(&api, &limiter);
    let outcome = harvester.harvest(&tiers, QueryTier::Q137, &RankOrder::ALL, 4).map_err(|e| e.to_string())?;
    let mut snapshot = CorpusSnapshot::new();
    for r in outcome.records {
        snapshot.upsert(r).map_err(|e| e.to_string())?;
    }
    let names = |t: QueryTier| -> BTreeSet<String> { snapshot.export_tier(t).iter().map(|r| r.full_name.clone()).collect() };
    let (q1, q50, q137) = (names(QueryTier::Q1), names(QueryTier::Q50), names(QueryTier::Q137));
    ensure(q1.is_subset(&q50) && q50.is_subset(&q137), || "tiers do not nest".into())?;
    ensure(!q1.is_empty() && q1.len() < q137.len(), || format!("degenerate tiers {} / {}", q1.len(), q137.len()))?;

    // A harvest restricted to the narrowest tier finds exactly its export.
    let narrow = harvester.harvest(&tiers, QueryTier::Q1, &RankOrder::ALL, 2).map_err(|e| e.to_string())?;
    let narrow: BTreeSet<String> = narrow.records.into_iter().map(|r| r.full_name).collect();
    ensure(narrow == q1, || "Q1 harvest differs from Q1 export".into())?;
    Ok(format!("{} ⊆ {} ⊆ {}", q1.len(), q50.len(), q137.len()))
}

fn main() {
    let checks: [Check; 9] = [
        ("chi-square oracle", chi_square_oracle),
        ("naive Bayes exactness", nb_exactness),
        ("feature budget", feature_budget),
        ("end-to-end fixture", end_to_end),
        ("source heuristic boundary", source_boundary),
        ("rate limiter window", rate_limiter),
        ("pipeline subset", pipeline_subset),
        ("analytics", analytics_exact),
        ("tier subset", tier_subset),
    ];
    let mut failed = 0;
    let mut results = BTreeMap::new();
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = check();
        let ms = start.elapsed().as_millis();
        match &outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{ms} ms]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{ms} ms]");
            }
        }
        results.insert(name, outcome.is_ok());
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
