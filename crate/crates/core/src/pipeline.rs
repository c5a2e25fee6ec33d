//! Composition of the trained classifier with the source-code filter.
//!
//! Applying a model yields the malware set; the source filter only ever
//! narrows that set, so `malware_with_source ⊆ classify ⊆ corpus`.

use serde::{Deserialize, Serialize};

use crate::featurize::Vocabulary;
use crate::nb::{NaiveBayesModel, NbError};
use crate::srcdetect::{detect, SourceDetectConfig, SourceVerdict};
use crate::textprep::Preprocessor;
use crate::{Class, RepositoryRecord, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classified {
    pub full_name: String,
    pub class: Class,
    pub log_posterior_malware: f64,
}

/// Runs the model over every record, in input order.
pub fn classify_records<'a, T: Scalar>(
    model: &NaiveBayesModel<T>,
    vocab: &Vocabulary<T>,
    pre: &Preprocessor,
    records: impl IntoIterator<Item = &'a RepositoryRecord>,
) -> Result<Vec<Classified>, NbError> {
    let hash = vocab.content_hash();
    if let Some(expected) = &model.vocabulary_hash {
        if *expected != hash {
            return Err(NbError::VocabularyMismatch { model: expected.clone(), given: hash });
        }
    }
    records
        .into_iter()
        .map(|r| {
            let v = vocab.vectorize(&r.full_name, &pre.process_record(r));
            let p = model.predict(&v)?;
            Ok(Classified {
                full_name: r.full_name.clone(),
                class: p.class,
                log_posterior_malware: p.log_posterior()[Class::Malware.index()].to_f64_lossy(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub full_name: String,
    #[serde(flatten)]
    pub verdict: SourceVerdict,
}

/// Keeps the repositories classified as malware whose file list passes the
/// source-code ratio test.
pub fn malware_with_source<'a>(
    classified: &[Classified],
    records: impl IntoIterator<Item = &'a RepositoryRecord>,
    config: &SourceDetectConfig,
) -> Vec<SourceEntry> {
    let by_name: std::collections::HashMap<&str, &RepositoryRecord> =
        records.into_iter().map(|r| (r.full_name.as_str(), r)).collect();
    classified
        .iter()
        .filter(|c| c.class == Class::Malware)
        .filter_map(|c| by_name.get(c.full_name.as_str()).map(|r| (c, r)))
        .map(|(c, r)| SourceEntry { full_name: c.full_name.clone(), verdict: detect(&r.file_paths, config) })
        .filter(|e| e.verdict.is_source)
        .collect()
}
