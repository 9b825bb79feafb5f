//! Corpus data model: label schemas, annotated samples and annotation
//! distributions.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a probability vector.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// Ordered label set. The position of a label is its index everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct LabelSchema {
    task_id: String,
    labels: Vec<String>,
}

#[derive(Deserialize)]
struct RawSchema {
    task_id: String,
    labels: Vec<String>,
}

impl TryFrom<RawSchema> for LabelSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        LabelSchema::new(raw.task_id, raw.labels)
    }
}

impl LabelSchema {
    pub fn new(task_id: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidSchema("label list is empty".into()));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.trim().is_empty() {
                return Err(Error::InvalidSchema("blank label name".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate label `{label}`")));
            }
        }
        Ok(Self {
            task_id: task_id.into(),
            labels,
        })
    }

    /// Three-way tweet labels in dataset order.
    pub fn hate_speech() -> Self {
        Self::new(
            "hate_speech",
            ["Hate", "Offensive", "Normal"].map(String::from).to_vec(),
        )
        .expect("static schema is valid")
    }

    /// Five-point abuse severity scale in dataset order.
    pub fn abusive_conversation() -> Self {
        Self::new(
            "abusive_conversation",
            [
                "Not abusive",
                "Ambiguous",
                "Mildly abusive",
                "Strongly abusive",
                "Very strongly abusive",
            ]
            .map(String::from)
            .to_vec(),
        )
        .expect("static schema is valid")
    }

    /// Looks up one of the built-in schemas by task id.
    pub fn builtin(task_id: &str) -> Option<Self> {
        match task_id {
            "hate_speech" | "hate-speech" => Some(Self::hate_speech()),
            "abusive_conversation" | "abusive-conversation" => Some(Self::abusive_conversation()),
            _ => None,
        }
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }
}

/// Dataset partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split `{other}` (expected train, validation or test)"
            )),
        }
    }
}

/// One annotator's label for one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    /// Real annotator name, or a synthetic `slot_k` id for anonymous data.
    pub annotator: String,
    pub label: usize,
}

impl Annotation {
    pub fn new(annotator: impl Into<String>, label: usize) -> Self {
        Self {
            annotator: annotator.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSample {
    pub id: String,
    pub text: String,
    pub annotations: Vec<Annotation>,
    pub split: Split,
}

impl AnnotatedSample {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        annotations: Vec<Annotation>,
        split: Split,
    ) -> Result<Self> {
        let sample = Self {
            id: id.into(),
            text: text.into(),
            annotations,
            split,
        };
        sample.check()?;
        Ok(sample)
    }

    fn check(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidSample {
            sample_id: self.id.clone(),
            message,
        };
        if self.annotations.is_empty() {
            return Err(invalid("no annotations".into()));
        }
        let mut seen = HashSet::new();
        for a in &self.annotations {
            if !seen.insert(a.annotator.as_str()) {
                return Err(invalid(format!("annotator `{}` appears twice", a.annotator)));
            }
        }
        Ok(())
    }
}

/// Probability vector over the labels of a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AnnotationDistribution(Vec<f64>);

impl TryFrom<Vec<f64>> for AnnotationDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<AnnotationDistribution> for Vec<f64> {
    fn from(d: AnnotationDistribution) -> Self {
        d.0
    }
}

impl AnnotationDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some(p) = probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(classes: usize, index: usize) -> Self {
        assert!(index < classes, "one-hot index out of range");
        let mut probs = vec![0.0; classes];
        probs[index] = 1.0;
        Self(probs)
    }

    pub fn uniform(classes: usize) -> Self {
        assert!(classes > 0);
        Self(vec![1.0 / classes as f64; classes])
    }

    /// Empirical distribution of label counts.
    pub(crate) fn from_counts(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        debug_assert!(total > 0);
        Self(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    /// For vectors normalized by construction (softmax outputs).
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= DISTRIBUTION_TOLERANCE);
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn label_counts(annotations: &[Annotation], schema: &LabelSchema) -> Result<Vec<usize>> {
    if annotations.is_empty() {
        return Err(Error::EmptyAnnotations);
    }
    let mut counts = vec![0usize; schema.len()];
    for a in annotations {
        let slot = counts
            .get_mut(a.label)
            .ok_or(Error::DimensionMismatch {
                expected: schema.len(),
                actual: a.label + 1,
            })?;
        *slot += 1;
    }
    Ok(counts)
}

/// Fraction of annotations carrying each label.
pub fn build_distribution(
    annotations: &[Annotation],
    schema: &LabelSchema,
) -> Result<AnnotationDistribution> {
    label_counts(annotations, schema).map(|c| AnnotationDistribution::from_counts(&c))
}

/// Most frequent label; ties are broken by the lowest schema index.
pub fn majority_label(annotations: &[Annotation], schema: &LabelSchema) -> Result<usize> {
    let counts = label_counts(annotations, schema)?;
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    Ok(best)
}

/// A validated set of samples under one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    schema: LabelSchema,
    samples: Vec<AnnotatedSample>,
    annotators: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new(schema: LabelSchema, samples: Vec<AnnotatedSample>) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut annotators = BTreeMap::new();
        for sample in &samples {
            sample.check()?;
            if !ids.insert(sample.id.as_str()) {
                return Err(Error::InvalidCorpus(format!(
                    "duplicate sample id `{}`",
                    sample.id
                )));
            }
            for a in &sample.annotations {
                if a.label >= schema.len() {
                    return Err(Error::InvalidSample {
                        sample_id: sample.id.clone(),
                        message: format!(
                            "label index {} outside schema of size {}",
                            a.label,
                            schema.len()
                        ),
                    });
                }
                *annotators.entry(a.annotator.clone()).or_insert(0) += 1;
            }
        }
        Ok(Self {
            schema,
            samples,
            annotators,
        })
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn samples(&self) -> &[AnnotatedSample] {
        &self.samples
    }

    /// Annotator ids with their annotation counts, sorted by id.
    pub fn annotators(&self) -> &BTreeMap<String, usize> {
        &self.annotators
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &AnnotatedSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn get(&self, sample_id: &str) -> Option<&AnnotatedSample> {
        self.samples.iter().find(|s| s.id == sample_id)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<AnnotatedSample> {
        self.samples
    }
}
