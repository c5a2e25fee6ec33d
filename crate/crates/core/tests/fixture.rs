//! The bundled fixture workspace must match the generator byte for byte.
//! Set REPOMINE_REGENERATE=1 to rewrite it after changing the generator.

use std::fs;
use std::path::PathBuf;

use repomine::corpus::{CorpusSnapshot, CORPUS_FILE, LABELS_FILE};
use repomine::synth::fixture_corpus;
use repomine::Class;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn generated() -> CorpusSnapshot {
    let mut snap = CorpusSnapshot::new();
    for (record, class) in fixture_corpus() {
        let name = record.full_name.clone();
        snap.upsert(record).unwrap();
        snap.set_label(&name, class).unwrap();
    }
    snap
}

#[test]
fn bundled_fixture_matches_generator() {
    let snap = generated();
    let dir = fixture_dir();
    let corpus = snap.records_to_jsonl();
    let labels = snap.labels_to_jsonl();
    if std::env::var_os("REPOMINE_REGENERATE").is_some() {
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join(CORPUS_FILE), &corpus).unwrap();
        fs::write(dir.join(LABELS_FILE), &labels).unwrap();
    }
    assert_eq!(fs::read_to_string(dir.join(CORPUS_FILE)).unwrap(), corpus);
    assert_eq!(fs::read_to_string(dir.join(LABELS_FILE)).unwrap(), labels);
}

#[test]
fn bundled_fixture_loads_balanced() {
    let snap = CorpusSnapshot::load_dir(&fixture_dir()).unwrap();
    assert_eq!(snap.len(), 120);
    let malware = snap.labels().values().filter(|c| **c == Class::Malware).count();
    assert_eq!((malware, snap.labels().len()), (60, 120));
    assert!(snap.find_exact_duplicates().is_empty());
}
