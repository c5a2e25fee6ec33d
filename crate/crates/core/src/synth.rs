//! Seeded synthetic corpora with class-dependent word distributions, used as
//! the bundled end-to-end fixture and in tests.

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::record::{Class, QueryTier, RepositoryRecord};

/// Seed of the bundled 120-repository fixture.
pub const FIXTURE_SEED: u64 = 0x6d61_6c77;
pub const FIXTURE_PER_CLASS: usize = 60;

const MALWARE_WORDS: &[&str] = &[
    "keylogger", "backdoor", "botnet", "trojan", "rootkit", "ransomware", "payload", "exploit", "inject",
    "stealer", "spyware", "worm", "virus", "shellcode", "persistence", "obfuscate", "dropper", "crypter",
    "infect", "malicious", "ddos", "sniffer", "spoof", "command", "control", "evasion", "hook", "credential",
];
const BENIGN_WORDS: &[&str] = &[
    "calculator", "tutorial", "website", "game", "library", "parser", "database", "homework", "portfolio",
    "blog", "recipe", "weather", "chat", "todo", "plugin", "theme", "notebook", "course", "dashboard",
    "template", "music", "editor", "compiler", "chess", "bootstrap", "frontend", "exercise",
];
const SHARED_WORDS: &[&str] = &[
    "tool", "source", "code", "simple", "project", "python", "script", "application", "program", "version",
    "build", "example", "github", "release", "support", "feature", "update", "install", "config", "client",
];
const PLATFORM_WORDS: &[&str] = &["windows", "linux", "macos", "android", "iphone", "iot", "mirai", "router"];
const SOURCE_EXT: &[&str] = &["c", "cpp", "h", "py", "asm", "go", "js", "ps1", "sh", "bat", "cs", "java"];
const OTHER_EXT: &[&str] = &["md", "txt", "png", "json", "html", "css", "pdf", "yml"];
const MALWARE_FILES: &[&str] = &["payload", "inject", "hook", "keylog", "loader", "stub", "bot", "crypter", "shell"];
const BENIGN_FILES: &[&str] = &["index", "app", "style", "model", "view", "helpers", "widget", "page", "route"];
const SHARED_FILES: &[&str] = &["main", "utils", "test", "config", "core", "common", "lib", "setup"];

fn pick<'a>(rng: &mut ChaCha8Rng, own: &'a [&'a str], other: &'a [&'a str], own_p: f64) -> &'a str {
    let r: f64 = rng.random();
    let pool = if r < own_p {
        own
    } else if r < own_p + 0.15 {
        other
    } else {
        SHARED_WORDS
    };
    pool.choose(rng).expect("non-empty pool")
}

fn sentence(rng: &mut ChaCha8Rng, own: &[&str], other: &[&str], own_p: f64, len: usize) -> String {
    (0..len).map(|_| pick(rng, own, other, own_p)).collect::<Vec<_>>().join(" ")
}

fn one_repo(rng: &mut ChaCha8Rng, i: usize, class: Class) -> RepositoryRecord {
    let (own, other, files) = match class {
        Class::Malware => (MALWARE_WORDS, BENIGN_WORDS, MALWARE_FILES),
        Class::Benign => (BENIGN_WORDS, MALWARE_WORDS, BENIGN_FILES),
    };
    // Some repositories of either class are hard to tell apart: security
    // course material, or malware described in neutral terms.
    let own_p = if rng.random_bool(0.15) { 0.12 } else { 0.45 };
    let title_len = rng.random_range(1..=3);
    let title = sentence(rng, own, other, own_p, title_len);
    let desc_len = rng.random_range(4..=12);
    let mut description = sentence(rng, own, other, own_p, desc_len);
    if class == Class::Malware && rng.random_bool(0.6) {
        description.push_str(&format!(" for {}", PLATFORM_WORDS.choose(rng).expect("platforms")));
    }
    let topics: Vec<String> = (0..rng.random_range(0..=3)).map(|_| pick(rng, own, other, own_p).to_string()).collect();
    let readme = if rng.random_bool(0.2) {
        String::new()
    } else {
        let len = rng.random_range(8..=30);
        format!("# {title}\n\n{}.\n", sentence(rng, own, other, own_p * 0.6, len))
    };
    // Most malware repositories ship code; a few are write-ups or link lists.
    let source_share = match class {
        Class::Malware if rng.random_bool(0.8) => 0.9,
        Class::Malware => 0.3,
        Class::Benign => 0.5,
    };
    let n_files = rng.random_range(3..=12);
    let mut file_paths: Vec<String> = (0..n_files)
        .map(|k| {
            let ext = if rng.random_bool(source_share) { SOURCE_EXT } else { OTHER_EXT }
                .choose(rng)
                .expect("extensions");
            let base = if rng.random_bool(own_p) { files } else { SHARED_FILES }.choose(rng).expect("file names");
            format!("src/{base}{k}.{ext}")
        })
        .collect();
    file_paths.push("README.md".into());
    if rng.random_bool(0.5) {
        file_paths.push("LICENSE".into());
    }

    let author = match class {
        // A skewed author population with one prolific account.
        Class::Malware if rng.random_bool(0.25) => "darkcoder".to_string(),
        Class::Malware => format!("hax{}", rng.random_range(0..15)),
        Class::Benign => format!("dev{}", rng.random_range(0..25)),
    };
    let slug: String = title.split_whitespace().collect::<Vec<_>>().join("-");
    let created = NaiveDate::from_ymd_opt(2010, 1, 1).expect("date") + Duration::days(rng.random_range(0..3650));
    let modified = created + Duration::days(rng.random_range(0..900));
    let stars: u64 = (rng.random::<f64>().powi(4) * 2000.0) as u64;
    RepositoryRecord {
        full_name: format!("{author}/{slug}-{i}"),
        title,
        description,
        topics,
        readme,
        file_paths,
        created_at: created,
        modified_at: modified,
        fork_count: stars / 3 + rng.random_range(0..5),
        watcher_count: stars / 10 + rng.random_range(0..3),
        star_count: stars,
        author_followers: rng.random_range(0..500),
        author_following: rng.random_range(0..50),
        fetched_at: Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).single().expect("timestamp"),
        query_tier: [QueryTier::Q1, QueryTier::Q50, QueryTier::Q137][rng.random_range(0..3)],
    }
}

/// `per_class` malware and `per_class` benign repositories, interleaved.
pub fn synthetic_corpus(seed: u64, per_class: usize) -> Vec<(RepositoryRecord, Class)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        for class in Class::ALL {
            let idx = out.len();
            out.push((one_repo(&mut rng, idx, class), class));
        }
    }
    out
}

/// The bundled end-to-end fixture: 60 malware and 60 benign repositories.
pub fn fixture_corpus() -> Vec<(RepositoryRecord, Class)> {
    synthetic_corpus(FIXTURE_SEED, FIXTURE_PER_CLASS)
}
