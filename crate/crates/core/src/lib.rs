//! Mining of malware source-code repositories from a public code archive.
//!
//! The crate covers the whole offline pipeline: keyword-tier harvesting with
//! rate limiting, a durable corpus store, three-stage text preprocessing,
//! chi-square vocabulary selection, a multinomial naive Bayes classifier with
//! stratified cross-validation, the source-code ratio heuristic, malware
//! type/platform tagging and ecosystem statistics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiations.

pub mod analytics;
pub mod corpus;
pub mod eval;
pub mod featurize;
pub mod harvester;
pub mod labels;
pub mod nb;
pub mod pipeline;
pub mod record;
pub mod scalar;
pub mod srcdetect;
pub mod synth;
pub mod taxonomy;
pub mod textprep;

pub use record::{Class, QueryTier, RepositoryRecord};
pub use scalar::Scalar;

pub type FeatureVector = featurize::FeatureVector<f64>;
pub type FeatureVectorF32 = featurize::FeatureVector<f32>;
pub type Vocabulary = featurize::Vocabulary<f64>;
pub type VocabularyF32 = featurize::Vocabulary<f32>;
pub type NaiveBayesModel = nb::NaiveBayesModel<f64>;
pub type NaiveBayesModelF32 = nb::NaiveBayesModel<f32>;
pub type EvalReport = eval::EvalReport<f64>;
pub type EvalReportF32 = eval::EvalReport<f32>;
pub type CcdfSeries = analytics::CcdfSeries<f64>;
pub type CorrelationResult = analytics::CorrelationResult<f64>;
