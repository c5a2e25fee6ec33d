//! Stratified k-fold cross-validation and per-class precision / recall / F1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::{select_vocabulary, FeatureVector, FeaturizeError, FieldBudget, WeightingMode};
use crate::nb::{train, NbError};
use crate::record::Class;
use crate::scalar::Scalar;
use crate::textprep::TokenizedRepo;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 folds and as many examples as folds (folds={folds}, examples={examples})")]
    TooFewExamples { folds: usize, examples: usize },
    #[error(transparent)]
    Model(#[from] NbError),
    #[error(transparent)]
    Features(#[from] FeaturizeError),
}

/// 2×2 confusion counts indexed `[actual][predicted]` by [`Class::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn record(&mut self, actual: Class, predicted: Class) {
        self.counts[actual.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for a in 0..2 {
            for p in 0..2 {
                self.counts[a][p] += other.counts[a][p];
            }
        }
    }

    /// One-vs-rest counts treating `class` as positive.
    pub fn for_class(&self, class: Class) -> ClassConfusion {
        let (pos, neg) = (class.index(), class.other().index());
        ClassConfusion {
            tp: self.counts[pos][pos],
            fp: self.counts[neg][pos],
            tn: self.counts[neg][neg],
            fn_: self.counts[pos][neg],
        }
    }

    /// The same outcomes with the two class labels exchanged.
    pub fn swapped(&self) -> ConfusionMatrix {
        let c = self.counts;
        ConfusionMatrix { counts: [[c[1][1], c[1][0]], [c[0][1], c[0][0]]] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassConfusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClassMetrics<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    /// Set when a zero denominator forced a metric to 0.
    pub degenerate: bool,
}

/// Precision, recall and F1; a zero denominator yields 0 and sets the flag.
pub fn compute_metrics<T: Scalar>(c: &ClassConfusion) -> ClassMetrics<T> {
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            T::zero()
        } else {
            T::from_u64(num).unwrap_or_else(T::nan) / T::from_u64(den).unwrap_or_else(T::nan)
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == T::zero() {
        degenerate = true;
        T::zero()
    } else {
        let two = T::one() + T::one();
        two * precision * recall / (precision + recall)
    };
    ClassMetrics { precision, recall, f1, degenerate }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClassReport<T> {
    pub class: Class,
    pub confusion: ClassConfusion,
    pub metrics: ClassMetrics<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FoldReport<T> {
    pub fold: usize,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
    pub accuracy: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EvalReport<T> {
    pub folds: usize,
    pub seed: u64,
    pub examples: usize,
    pub confusion: ConfusionMatrix,
    /// malware first, then benign
    pub per_class: Vec<ClassReport<T>>,
    pub accuracy: T,
    pub per_fold: Vec<FoldReport<T>>,
}

impl<T: Scalar> EvalReport<T> {
    pub fn class(&self, class: Class) -> &ClassReport<T> {
        &self.per_class[class.index()]
    }

    fn from_folds(folds: usize, seed: u64, per_fold: Vec<FoldReport<T>>) -> Self {
        let mut confusion = ConfusionMatrix::default();
        for f in &per_fold {
            confusion.merge(&f.confusion);
        }
        let per_class = Class::ALL
            .iter()
            .map(|&class| {
                let c = confusion.for_class(class);
                ClassReport { class, confusion: c, metrics: compute_metrics(&c) }
            })
            .collect();
        EvalReport {
            folds,
            seed,
            examples: confusion.total() as usize,
            accuracy: accuracy(&confusion),
            confusion,
            per_class,
            per_fold,
        }
    }
}

fn accuracy<T: Scalar>(c: &ConfusionMatrix) -> T {
    let total = c.total();
    if total == 0 {
        return T::zero();
    }
    T::from_u64(c.counts[0][0] + c.counts[1][1]).unwrap_or_else(T::nan) / T::from_u64(total).unwrap_or_else(T::nan)
}

/// Fold index of every example. Each class is shuffled with the seed and
/// dealt round-robin, continuing the rotation across classes so fold sizes
/// differ by at most one.
pub fn stratified_folds(labels: &[Class], folds: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    if folds < 2 || labels.len() < folds {
        return Err(EvalError::TooFewExamples { folds, examples: labels.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in Class::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

fn run_folds<T, F>(labels: &[Class], folds: usize, seed: u64, mut fold_fn: F) -> Result<EvalReport<T>, EvalError>
where
    T: Scalar,
    F: FnMut(&[usize], &[usize]) -> Result<Vec<Class>, EvalError>,
{
    let assignment = stratified_folds(labels, folds, seed)?;
    let mut per_fold = Vec::with_capacity(folds);
    for fold in 0..folds {
        let (test, train_idx): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == fold);
        let predicted = fold_fn(&train_idx, &test)?;
        let mut confusion = ConfusionMatrix::default();
        for (&i, p) in test.iter().zip(predicted) {
            confusion.record(labels[i], p);
        }
        per_fold.push(FoldReport { fold, test_size: test.len(), accuracy: accuracy(&confusion), confusion });
    }
    Ok(EvalReport::from_folds(folds, seed, per_fold))
}

/// Stratified k-fold evaluation over pre-built vectors.
pub fn cross_validate<T: Scalar>(
    examples: &[(FeatureVector<T>, Class)],
    folds: usize,
    alpha: T,
    seed: u64,
) -> Result<EvalReport<T>, EvalError> {
    let labels: Vec<Class> = examples.iter().map(|(_, c)| *c).collect();
    run_folds(&labels, folds, seed, |train_idx, test| {
        let training: Vec<_> = train_idx.iter().map(|&i| examples[i].clone()).collect();
        let model = train(&training, alpha)?;
        test.iter().map(|&i| Ok(model.predict(&examples[i].0)?.class)).collect()
    })
}

/// Stratified k-fold evaluation that re-selects the vocabulary inside every
/// training split, so held-out documents never influence feature choice.
pub fn cross_validate_documents<T: Scalar>(
    docs: &[(TokenizedRepo, Class)],
    budgets: &[FieldBudget],
    mode: WeightingMode,
    folds: usize,
    alpha: T,
    seed: u64,
) -> Result<EvalReport<T>, EvalError> {
    let labels: Vec<Class> = docs.iter().map(|(_, c)| *c).collect();
    run_folds(&labels, folds, seed, |train_idx, test| {
        let training_docs: Vec<_> = train_idx.iter().map(|&i| docs[i].clone()).collect();
        let vocab = select_vocabulary::<T>(&training_docs, budgets, mode)?;
        let training: Vec<_> = training_docs.iter().map(|(r, c)| (vocab.vectorize("", r), *c)).collect();
        let model = train(&training, alpha)?;
        test.iter()
            .map(|&i| Ok(model.predict(&vocab.vectorize("", &docs[i].0))?.class))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let m: ClassMetrics<f64> = compute_metrics(&ClassConfusion { tp: 8, fp: 2, tn: 0, fn_: 2 });
        assert!((m.precision - 0.8).abs() < 1e-15);
        assert!((m.recall - 0.8).abs() < 1e-15);
        assert!((m.f1 - 0.8).abs() < 1e-15);
        assert!(!m.degenerate);

        let d: ClassMetrics<f64> = compute_metrics(&ClassConfusion { tp: 0, fp: 0, tn: 5, fn_: 3 });
        assert_eq!(d.precision, 0.0);
        assert!(d.degenerate);

        let p: ClassMetrics<f32> = compute_metrics(&ClassConfusion { tp: 7, fp: 0, tn: 3, fn_: 0 });
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn folds_partition_examples() {
        let labels: Vec<Class> = (0..20).map(|i| if i % 2 == 0 { Class::Malware } else { Class::Benign }).collect();
        let a = stratified_folds(&labels, 10, 3).unwrap();
        for f in 0..10 {
            let members: Vec<usize> = (0..20).filter(|&i| a[i] == f).collect();
            assert_eq!(members.len(), 2);
            assert_eq!(members.iter().filter(|&&i| labels[i] == Class::Malware).count(), 1);
        }
        assert_eq!(a, stratified_folds(&labels, 10, 3).unwrap());
        assert!(matches!(stratified_folds(&labels[..5], 10, 0), Err(EvalError::TooFewExamples { .. })));
        assert!(matches!(stratified_folds(&labels, 1, 0), Err(EvalError::TooFewExamples { .. })));
    }

    fn separable() -> Vec<(FeatureVector<f64>, Class)> {
        (0..20)
            .map(|i| {
                let mal = i % 2 == 0;
                let values = if mal { vec![3.0, 0.0] } else { vec![0.0, 3.0] };
                (FeatureVector { repo_name: format!("r/{i}"), values }, if mal { Class::Malware } else { Class::Benign })
            })
            .collect()
    }

    #[test]
    fn separable_data_is_perfect() {
        let r = cross_validate(&separable(), 10, 1.0, 7).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.examples, 20);
        assert_eq!(r.per_fold.iter().map(|f| f.test_size).sum::<usize>(), 20);
        assert_eq!(r.class(Class::Malware).metrics.f1, 1.0);
        let again = cross_validate(&separable(), 10, 1.0, 7).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn report_counts_add_up() {
        let r = cross_validate(&separable(), 4, 1.0, 1).unwrap();
        for c in &r.per_class {
            let k = c.confusion;
            assert_eq!(k.tp + k.fp + k.tn + k.fn_, 20);
        }
    }

    proptest! {
        #[test]
        fn label_swap_swaps_metrics(c in prop::array::uniform4(0u64..50)) {
            let m = ConfusionMatrix { counts: [[c[0], c[1]], [c[2], c[3]]] };
            let s = m.swapped();
            for class in Class::ALL {
                let a: ClassMetrics<f64> = compute_metrics(&m.for_class(class));
                let b: ClassMetrics<f64> = compute_metrics(&s.for_class(class.other()));
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn metrics_in_unit_interval(c in prop::array::uniform4(0u64..50)) {
            let m: ClassMetrics<f64> = compute_metrics(&ClassConfusion { tp: c[0], fp: c[1], tn: c[2], fn_: c[3] });
            for x in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }
}
