//! Multinomial naive Bayes over fixed-width feature vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::FeatureVector;
use crate::record::Class;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum NbError {
    #[error("degenerate corpus: no {0} examples")]
    DegenerateCorpus(Class),
    #[error("smoothing alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("vector width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("feature values must be finite and non-negative")]
    NegativeFeature,
    #[error("model was trained against vocabulary {model}, not {given}")]
    VocabularyMismatch { model: String, given: String },
    #[error("model file is malformed: {0}")]
    Malformed(String),
}

/// Trained multinomial naive Bayes parameters for the two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NaiveBayesModel<T> {
    /// `ln(n_c / n)`, indexed by [`Class::index`]
    pub log_prior: [T; 2],
    /// `ln P(slot | class)`, one row per class
    pub log_likelihood: [Vec<T>; 2],
    pub alpha: T,
    pub class_counts: [u64; 2],
    /// Hash of the vocabulary the vectors were built from, when known.
    pub vocabulary_hash: Option<String>,
}

/// Class decision with the per-class joint log scores
/// `ln P(c) + Σ v_i ln P(i | c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub class: Class,
    pub log_joint: [T; 2],
}

impl<T: Scalar> Prediction<T> {
    /// Posterior log-probabilities, normalized over the two classes.
    pub fn log_posterior(&self) -> [T; 2] {
        let [m, b] = self.log_joint;
        let max = m.max(b);
        let lse = max + ((m - max).exp() + (b - max).exp()).ln();
        [m - lse, b - lse]
    }
}

/// Learns priors and Laplace/Lidstone-smoothed per-slot likelihoods.
pub fn train<T: Scalar>(examples: &[(FeatureVector<T>, Class)], alpha: T) -> Result<NaiveBayesModel<T>, NbError> {
    if alpha <= T::zero() || !alpha.is_finite() {
        return Err(NbError::InvalidAlpha(alpha.to_f64_lossy()));
    }
    let mut class_counts = [0u64; 2];
    for (_, c) in examples {
        class_counts[c.index()] += 1;
    }
    for class in Class::ALL {
        if class_counts[class.index()] == 0 {
            return Err(NbError::DegenerateCorpus(class));
        }
    }
    let width = examples[0].0.width();
    let mut slot_counts = [vec![T::zero(); width], vec![T::zero(); width]];
    for (v, c) in examples {
        if v.width() != width {
            return Err(NbError::WidthMismatch { expected: width, got: v.width() });
        }
        let row = &mut slot_counts[c.index()];
        for (acc, &x) in row.iter_mut().zip(&v.values) {
            if x < T::zero() || !x.is_finite() {
                return Err(NbError::NegativeFeature);
            }
            *acc = *acc + x;
        }
    }
    let n = T::from_u64(examples.len() as u64).unwrap_or_else(T::infinity);
    let w = T::from_usize_lossy(width);
    let log_prior = class_counts.map(|k| (T::from_u64(k).unwrap_or_else(T::infinity) / n).ln());
    let log_likelihood = slot_counts.map(|row| {
        let total = row.iter().fold(T::zero(), |acc, &x| acc + x);
        let denom = (total + alpha * w).ln();
        row.into_iter().map(|x| (x + alpha).ln() - denom).collect()
    });
    Ok(NaiveBayesModel { log_prior, log_likelihood, alpha, class_counts, vocabulary_hash: None })
}

impl<T: Scalar> NaiveBayesModel<T> {
    pub fn width(&self) -> usize {
        self.log_likelihood[0].len()
    }

    pub fn with_vocabulary_hash(mut self, hash: impl Into<String>) -> Self {
        self.vocabulary_hash = Some(hash.into());
        self
    }

    /// Joint log scores for raw slot values.
    pub fn log_joint(&self, values: &[T]) -> Result<[T; 2], NbError> {
        if values.len() != self.width() {
            return Err(NbError::WidthMismatch { expected: self.width(), got: values.len() });
        }
        Ok([0, 1].map(|c| {
            values
                .iter()
                .zip(&self.log_likelihood[c])
                .filter(|(v, _)| **v != T::zero())
                .fold(self.log_prior[c], |acc, (&v, &ll)| acc + v * ll)
        }))
    }

    /// Most probable class; an exact tie goes to benign.
    pub fn predict(&self, vector: &FeatureVector<T>) -> Result<Prediction<T>, NbError> {
        let log_joint = self.log_joint(&vector.values)?;
        let class = if log_joint[Class::Malware.index()] > log_joint[Class::Benign.index()] {
            Class::Malware
        } else {
            Class::Benign
        };
        Ok(Prediction { class, log_joint })
    }

    /// Largest deviation from 1 among the prior sum and each likelihood row sum.
    pub fn normalization_error(&self) -> f64 {
        let sum_exp = |xs: &[T]| xs.iter().map(|x| x.to_f64_lossy().exp()).sum::<f64>();
        let mut worst = (sum_exp(&self.log_prior) - 1.0).abs();
        for row in &self.log_likelihood {
            worst = worst.max((sum_exp(row) - 1.0).abs());
        }
        worst
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Parses `model.json`, refusing a model bound to a different vocabulary.
    pub fn from_json_checked(json: &str, vocabulary_hash: &str) -> Result<Self, NbError> {
        let model: Self = serde_json::from_str(json).map_err(|e| NbError::Malformed(e.to_string()))?;
        if model.log_likelihood[0].len() != model.log_likelihood[1].len() {
            return Err(NbError::Malformed("likelihood rows differ in width".into()));
        }
        match &model.vocabulary_hash {
            Some(h) if h == vocabulary_hash => Ok(model),
            Some(h) => Err(NbError::VocabularyMismatch { model: h.clone(), given: vocabulary_hash.to_string() }),
            None => Err(NbError::VocabularyMismatch { model: "<none>".into(), given: vocabulary_hash.to_string() }),
        }
    }
}
