//! Per-annotator ensembles.
//!
//! One sub-model is trained per label stream (a named annotator, or a
//! positional slot for anonymous data). Sub-models are ranked by validation
//! accuracy, the best `n` are kept, and their argmax votes are turned into a
//! label distribution. A conditioned classifier can stand in for the whole
//! set: each of its annotators becomes a virtual sub-model.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSpace, FeatureVector};
use crate::ingest::slot_id;
use crate::label::{majority_label, AnnotationDistribution, Corpus, LabelSchema, Split};
use crate::model::{featurize_all, Example, SoftmaxClassifier, TargetKind, TrainConfig};
use crate::rng::derive_seed;
use crate::stats::evaluate;

/// Smallest ensemble the selection accepts.
pub const MIN_SELECTION: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamMode {
    /// One stream per named annotator.
    Identified,
    /// One stream per annotation position.
    Slots,
}

impl std::str::FromStr for StreamMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "identified" => Ok(StreamMode::Identified),
            "slots" => Ok(StreamMode::Slots),
            other => Err(format!("unknown stream mode `{other}`")),
        }
    }
}

/// Which labels validation accuracy is measured against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyReference {
    /// The stream's own labels.
    #[default]
    OwnLabels,
    /// The majority label of each validation sample.
    Majority,
}

/// Labels of a single annotator or slot, grouped by split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelStream {
    pub stream_id: String,
    pub train: Vec<(String, usize)>,
    pub validation: Vec<(String, usize)>,
    pub test: Vec<(String, usize)>,
}

impl LabelStream {
    fn new(stream_id: String) -> Self {
        Self {
            stream_id,
            ..Self::default()
        }
    }

    pub fn pairs(&self, split: Split) -> &[(String, usize)] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn push(&mut self, split: Split, sample_id: &str, label: usize) {
        let pairs = match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        };
        pairs.push((sample_id.to_string(), label));
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits a corpus into label streams.
///
/// In slots mode the k-th stream takes the k-th annotation of every sample,
/// so reordering a sample's annotations changes the streams. Streams without
/// training pairs are dropped with a warning.
pub fn build_streams(corpus: &Corpus, mode: StreamMode) -> Result<Vec<LabelStream>> {
    let mut streams: BTreeMap<String, LabelStream> = BTreeMap::new();
    match mode {
        StreamMode::Identified => {
            for id in corpus.annotators().keys() {
                streams.insert(id.clone(), LabelStream::new(id.clone()));
            }
            for sample in corpus.samples() {
                for a in &sample.annotations {
                    streams
                        .get_mut(&a.annotator)
                        .expect("registry covers every annotator")
                        .push(sample.split, &sample.id, a.label);
                }
            }
        }
        StreamMode::Slots => {
            let width = corpus
                .samples()
                .first()
                .map(|s| s.annotations.len())
                .unwrap_or(0);
            if let Some(odd) = corpus.samples().iter().find(|s| s.annotations.len() != width) {
                return Err(Error::InvalidCorpus(format!(
                    "slots mode needs the same number of annotations per sample; `{}` has {} (expected {width})",
                    odd.id,
                    odd.annotations.len()
                )));
            }
            let mut slots: Vec<LabelStream> =
                (0..width).map(|k| LabelStream::new(slot_id(k))).collect();
            for sample in corpus.samples() {
                for (k, a) in sample.annotations.iter().enumerate() {
                    slots[k].push(sample.split, &sample.id, a.label);
                }
            }
            streams.extend(slots.into_iter().map(|s| (s.stream_id.clone(), s)));
        }
    }
    Ok(streams
        .into_values()
        .filter(|s| {
            if s.train.is_empty() {
                log::warn!("stream `{}` has no training pairs; skipped", s.stream_id);
                false
            } else {
                true
            }
        })
        .collect())
}

/// A trained sub-model, or a view of one annotator inside a conditioned model.
#[derive(Debug, Clone)]
pub enum SubModel {
    Standalone(Arc<SoftmaxClassifier>),
    Conditioned {
        model: Arc<SoftmaxClassifier>,
        annotator: String,
    },
}

impl SubModel {
    pub fn classifier(&self) -> &SoftmaxClassifier {
        match self {
            SubModel::Standalone(m) => m,
            SubModel::Conditioned { model, .. } => model,
        }
    }

    pub fn annotator(&self) -> Option<&str> {
        match self {
            SubModel::Standalone(_) => None,
            SubModel::Conditioned { annotator, .. } => Some(annotator),
        }
    }

    pub fn predict_label(&self, features: &FeatureVector) -> Result<usize> {
        self.classifier().predict_label(features, self.annotator())
    }
}

#[derive(Debug, Clone)]
pub struct SubModelRecord {
    pub stream_id: String,
    pub model: SubModel,
    pub validation_accuracy: f64,
}

/// Features for every sample of `corpus`, keyed by sample id.
fn corpus_features(corpus: &Corpus, space: &FeatureSpace) -> HashMap<String, FeatureVector> {
    let texts: Vec<&str> = corpus.samples().iter().map(|s| s.text.as_str()).collect();
    corpus
        .samples()
        .iter()
        .map(|s| s.id.clone())
        .zip(featurize_all(space, texts))
        .collect()
}

fn validation_accuracy(
    stream: &LabelStream,
    corpus: &Corpus,
    features: &HashMap<String, FeatureVector>,
    model: &SubModel,
    reference: AccuracyReference,
) -> Result<f64> {
    if stream.validation.is_empty() {
        log::warn!(
            "stream `{}` has no validation pairs; accuracy set to 0",
            stream.stream_id
        );
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (sample_id, own_label) in &stream.validation {
        let expected = match reference {
            AccuracyReference::OwnLabels => *own_label,
            AccuracyReference::Majority => {
                let sample = corpus.get(sample_id).expect("stream ids come from corpus");
                majority_label(&sample.annotations, corpus.schema())?
            }
        };
        if model.predict_label(&features[sample_id])? == expected {
            correct += 1;
        }
    }
    Ok(correct as f64 / stream.validation.len() as f64)
}

/// Trains one hard-label sub-model per label stream.
///
/// Stream seeds are the run seed xor the FNV-1a hash of the stream id, and
/// records come back sorted by stream id whatever order training finished in.
pub fn train_ensemble(
    corpus: &Corpus,
    space: &FeatureSpace,
    config: &TrainConfig,
    mode: StreamMode,
    reference: AccuracyReference,
) -> Result<Vec<SubModelRecord>> {
    config.validate()?;
    let streams = build_streams(corpus, mode)?;
    if streams.is_empty() {
        return Err(Error::InvalidCorpus("no label stream has training pairs".into()));
    }
    let features = corpus_features(corpus, space);
    let schema = corpus.schema();

    let mut records = streams
        .par_iter()
        .map(|stream| {
            let mut model = SoftmaxClassifier::zeros(
                schema.clone(),
                *space,
                TargetKind::HardMajority,
                Vec::new(),
            )?;
            let examples: Vec<Example> = stream
                .train
                .iter()
                .map(|(id, label)| Example {
                    features: features[id].clone(),
                    target: AnnotationDistribution::one_hot(schema.len(), *label),
                    annotator: None,
                })
                .collect();
            let stream_config = TrainConfig {
                seed: derive_seed(config.seed, &stream.stream_id),
                ..*config
            };
            model.fit(&examples, &stream_config)?;
            let model = SubModel::Standalone(Arc::new(model));
            let validation_accuracy =
                validation_accuracy(stream, corpus, &features, &model, reference)?;
            Ok(SubModelRecord {
                stream_id: stream.stream_id.clone(),
                model,
                validation_accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.stream_id.cmp(&b.stream_id));
    Ok(records)
}

/// Wraps each annotator of a conditioned model as a sub-model record, scored
/// on that annotator's validation labels.
pub fn virtual_records(
    model: Arc<SoftmaxClassifier>,
    corpus: &Corpus,
    reference: AccuracyReference,
) -> Result<Vec<SubModelRecord>> {
    if !model.is_conditioned() {
        return Err(Error::ConditioningMismatch(
            "virtual sub-models need a conditioned model".into(),
        ));
    }
    let features = corpus_features(corpus, model.space());
    let streams: HashMap<String, LabelStream> = build_streams(corpus, StreamMode::Identified)?
        .into_iter()
        .map(|s| (s.stream_id.clone(), s))
        .collect();
    let mut records = Vec::new();
    for annotator in model.annotator_index() {
        let Some(stream) = streams.get(annotator) else {
            log::warn!("annotator `{annotator}` has no training pairs in this corpus; skipped");
            continue;
        };
        let sub = SubModel::Conditioned {
            model: Arc::clone(&model),
            annotator: annotator.clone(),
        };
        let validation_accuracy = validation_accuracy(stream, corpus, &features, &sub, reference)?;
        records.push(SubModelRecord {
            stream_id: annotator.clone(),
            model: sub,
            validation_accuracy,
        });
    }
    records.sort_by(|a, b| a.stream_id.cmp(&b.stream_id));
    Ok(records)
}

/// Records ranked by validation accuracy, with the first `n` selected.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    ranked: Vec<SubModelRecord>,
    n: usize,
    space: FeatureSpace,
    schema: LabelSchema,
}

/// Ranks records by descending validation accuracy (ties: smaller stream id)
/// and keeps the top `n`.
pub fn select_top_n(records: &[SubModelRecord], n: usize) -> Result<EnsembleModel> {
    if n < MIN_SELECTION || n > records.len() {
        return Err(Error::InvalidSelection(format!(
            "n = {n} outside {MIN_SELECTION}..={}",
            records.len()
        )));
    }
    let first = records[0].model.classifier();
    let (space, schema) = (*first.space(), first.schema().clone());
    if let Some(r) = records.iter().find(|r| {
        r.model.classifier().space() != &space || r.model.classifier().schema() != &schema
    }) {
        return Err(Error::InvalidSelection(format!(
            "sub-model `{}` uses a different feature space or schema",
            r.stream_id
        )));
    }
    let mut ranked = records.to_vec();
    ranked.sort_by(|a, b| {
        b.validation_accuracy
            .total_cmp(&a.validation_accuracy)
            .then_with(|| a.stream_id.cmp(&b.stream_id))
    });
    Ok(EnsembleModel {
        ranked,
        n,
        space,
        schema,
    })
}

impl EnsembleModel {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn selected(&self) -> &[SubModelRecord] {
        &self.ranked[..self.n]
    }

    /// Every record in rank order, selected or not.
    pub fn ranked(&self) -> &[SubModelRecord] {
        &self.ranked
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn votes(&self, features: &FeatureVector) -> Result<Vec<usize>> {
        self.selected()
            .iter()
            .map(|r| r.model.predict_label(features))
            .collect()
    }

    pub fn predict_features(&self, features: &FeatureVector) -> Result<AnnotationDistribution> {
        aggregate(&self.votes(features)?, &self.schema)
    }

    pub fn predict(&self, text: &str) -> Result<AnnotationDistribution> {
        self.predict_features(&self.space.featurize(text))
    }

    /// Predictions for every sample of `split`, in corpus order.
    pub fn predict_split(
        &self,
        corpus: &Corpus,
        split: Split,
    ) -> Result<Vec<(String, AnnotationDistribution)>> {
        let samples: Vec<_> = corpus.split(split).collect();
        let features = featurize_all(
            &self.space,
            samples.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(),
        );
        samples
            .par_iter()
            .zip(&features)
            .map(|(s, x)| Ok((s.id.clone(), self.predict_features(x)?)))
            .collect()
    }
}

/// Share of votes per label.
pub fn aggregate(votes: &[usize], schema: &LabelSchema) -> Result<AnnotationDistribution> {
    if votes.is_empty() {
        return Err(Error::EmptyVotes);
    }
    let mut counts = vec![0usize; schema.len()];
    for &v in votes {
        *counts.get_mut(v).ok_or(Error::DimensionMismatch {
            expected: schema.len(),
            actual: v + 1,
        })? += 1;
    }
    Ok(AnnotationDistribution::from_counts(&counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub mean_cross_entropy: f64,
}

/// Mean test cross entropy of the top-n ensemble for each `n` in the range.
pub fn sweep_top_n(
    records: &[SubModelRecord],
    corpus: &Corpus,
    n_range: RangeInclusive<usize>,
) -> Result<Vec<SweepRow>> {
    if n_range.is_empty() || *n_range.start() < MIN_SELECTION || *n_range.end() > records.len() {
        return Err(Error::InvalidSelection(format!(
            "sweep range {}..={} outside {MIN_SELECTION}..={}",
            n_range.start(),
            n_range.end(),
            records.len()
        )));
    }
    let full = select_top_n(records, records.len())?;
    let test: Vec<_> = corpus.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let features = featurize_all(
        full.space(),
        test.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(),
    );
    // Votes of every ranked sub-model, computed once.
    let votes: Vec<Vec<usize>> = features
        .par_iter()
        .map(|x| {
            full.ranked()
                .iter()
                .map(|r| r.model.predict_label(x))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    n_range
        .map(|n| {
            let predictions = test
                .iter()
                .zip(&votes)
                .map(|(s, v)| Ok((s.id.clone(), aggregate(&v[..n], full.schema())?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow {
                n,
                mean_cross_entropy: evaluate(&predictions, corpus)?.mean,
            })
        })
        .collect()
}

/// CSV with header `n,mean_cross_entropy`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n,mean_cross_entropy\n");
    for row in rows {
        out.push_str(&format!("{},{}\n", row.n, row.mean_cross_entropy));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub stream_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub model_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub selected_n: usize,
    pub streams: Vec<ManifestEntry>,
}

fn file_stem_for(stream_id: &str) -> String {
    stream_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes one model file per standalone sub-model (or one shared file for a
/// conditioned model) plus `ensemble.json` into `dir`.
pub fn save_ensemble(records: &[SubModelRecord], selected_n: usize, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut conditioned_path: Option<PathBuf> = None;
    let mut streams = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let model_path = match &record.model {
            SubModel::Standalone(model) => {
                let name = PathBuf::from(format!("{i:03}_{}.model.json", file_stem_for(&record.stream_id)));
                model.save(&dir.join(&name))?;
                name
            }
            SubModel::Conditioned { model, .. } => match &conditioned_path {
                Some(p) => p.clone(),
                None => {
                    let name = PathBuf::from("conditioned.model.json");
                    model.save(&dir.join(&name))?;
                    conditioned_path = Some(name.clone());
                    name
                }
            },
        };
        streams.push(ManifestEntry {
            stream_id: record.stream_id.clone(),
            model_path,
            annotator: record.model.annotator().map(String::from),
            validation_accuracy: record.validation_accuracy,
        });
    }
    let manifest = EnsembleManifest {
        selected_n,
        streams,
    };
    let path = dir.join("ensemble.json");
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a manifest and its models. Returns the records and the stored `n`.
pub fn load_ensemble(manifest_path: &Path) -> Result<(Vec<SubModelRecord>, usize)> {
    let bytes = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: EnsembleManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::json(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cache: HashMap<PathBuf, Arc<SoftmaxClassifier>> = HashMap::new();
    let mut records = Vec::new();
    for entry in manifest.streams {
        let path = base.join(&entry.model_path);
        let model = match cache.get(&path) {
            Some(m) => Arc::clone(m),
            None => {
                let m = Arc::new(SoftmaxClassifier::load(&path)?);
                cache.insert(path.clone(), Arc::clone(&m));
                m
            }
        };
        let model = match entry.annotator {
            Some(annotator) => {
                model.resolve_annotator(Some(&annotator))?;
                SubModel::Conditioned { model, annotator }
            }
            None => {
                model.resolve_annotator(None)?;
                SubModel::Standalone(model)
            }
        };
        records.push(SubModelRecord {
            stream_id: entry.stream_id,
            model,
            validation_accuracy: entry.validation_accuracy,
        });
    }
    Ok((records, manifest.selected_n))
}
