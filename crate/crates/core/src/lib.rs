//! Disagreement-aware text classification.
//!
//! Trains softmax classifiers on the full distribution of annotator labels
//! (soft targets), on per-annotator label streams combined by top-n voting,
//! or on annotator-conditioned inputs, and evaluates them by cross entropy
//! against annotation distributions. Also builds instruction-tuning prompt
//! datasets and runs the blinded preference survey used to compare a
//! majority-label baseline with a soft-label model.

pub mod ensemble;
pub mod error;
pub mod features;
pub mod ingest;
mod json;
pub mod label;
pub mod model;
pub mod prompt;
pub mod rng;
pub mod stats;
pub mod survey;
pub mod synth;

pub use error::{Error, Result};
pub use features::{FeatureSpace, FeatureVector, NgramRange};
pub use ingest::CorpusShape;
pub use label::{
    build_distribution, majority_label, AnnotatedSample, Annotation, AnnotationDistribution,
    Corpus, LabelSchema, Split,
};
pub use ensemble::{EnsembleModel, StreamMode, SubModelRecord};
pub use model::{SoftmaxClassifier, TargetKind, TrainConfig};
pub use stats::{cross_entropy, preference_test, EvalReport, PreferenceCounts};
