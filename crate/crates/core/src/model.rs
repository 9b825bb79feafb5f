//! Multinomial softmax classifier over hashed text features, trained by
//! mini-batch gradient descent against hard, soft or annotator-conditioned
//! targets.
//!
//! The input of a conditioned model is the feature vector followed by a
//! one-hot block over its annotator index, so the weight matrix is
//! `C x (D + A)`. A bias-only model has `D = 0` and ignores text entirely.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSpace, FeatureVector};
use crate::json::to_vec_full_precision;
use crate::label::{
    argmax, build_distribution, majority_label, AnnotationDistribution, Corpus, LabelSchema, Split,
};
use crate::rng::SeededRng;

/// Floor applied to probabilities inside the logarithm only.
pub const PROB_FLOOR: f64 = 1e-12;

const MODEL_FORMAT: &str = "crowdlabel-softmax/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// One-hot majority label per sample.
    HardMajority,
    /// Empirical annotation distribution per sample.
    SoftDistribution,
    /// One pair per annotation with the annotator appended to the input.
    Conditioned,
}

impl std::str::FromStr for TargetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "hard" | "hard_majority" => Ok(TargetKind::HardMajority),
            "soft" | "soft_distribution" => Ok(TargetKind::SoftDistribution),
            "conditioned" => Ok(TargetKind::Conditioned),
            other => Err(format!("unknown target kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 64,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "l2 must be non-negative, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

/// Weight matrix (row-major, one row per class) and bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Parameters {
    fn zeros(classes: usize, width: usize) -> Self {
        Self {
            weights: vec![0.0; classes * width],
            bias: vec![0.0; classes],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// One training or evaluation input, resolved against a model.
#[derive(Debug, Clone)]
pub struct Example {
    pub features: FeatureVector,
    pub target: AnnotationDistribution,
    /// Position in the model's annotator index.
    pub annotator: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    schema: LabelSchema,
    space: FeatureSpace,
    kind: TargetKind,
    feature_dim: usize,
    annotator_index: Vec<String>,
    params: Parameters,
    trained_with: Option<TrainConfig>,
}

impl SoftmaxClassifier {
    /// All-zero model reading every feature of `space`.
    pub fn zeros(
        schema: LabelSchema,
        space: FeatureSpace,
        kind: TargetKind,
        annotator_index: Vec<String>,
    ) -> Result<Self> {
        let feature_dim = space.dimension();
        Self::with_shape(schema, space, kind, feature_dim, annotator_index)
    }

    /// All-zero model that ignores its input and learns only class biases.
    pub fn bias_only(schema: LabelSchema, space: FeatureSpace, kind: TargetKind) -> Self {
        Self::with_shape(schema, space, kind, 0, Vec::new()).expect("bias-only shape is valid")
    }

    fn with_shape(
        schema: LabelSchema,
        space: FeatureSpace,
        kind: TargetKind,
        feature_dim: usize,
        annotator_index: Vec<String>,
    ) -> Result<Self> {
        check_annotator_index(kind, &annotator_index)?;
        let width = feature_dim + annotator_index.len();
        Ok(Self {
            params: Parameters::zeros(schema.len(), width),
            schema,
            space,
            kind,
            feature_dim,
            annotator_index,
            trained_with: None,
        })
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn classes(&self) -> usize {
        self.schema.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Number of input columns: features plus annotator one-hot.
    pub fn width(&self) -> usize {
        self.feature_dim + self.annotator_index.len()
    }

    pub fn annotator_index(&self) -> &[String] {
        &self.annotator_index
    }

    pub fn is_conditioned(&self) -> bool {
        !self.annotator_index.is_empty()
    }

    pub fn trained_with(&self) -> Option<&TrainConfig> {
        self.trained_with.as_ref()
    }

    pub fn parameters(&self) -> &Parameters {
        &self.params
    }

    /// Direct parameter access; callers must keep every value finite.
    pub fn parameters_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    /// Resolves an optional annotator id to its conditioning slot.
    pub fn resolve_annotator(&self, annotator: Option<&str>) -> Result<Option<usize>> {
        match (self.is_conditioned(), annotator) {
            (true, Some(id)) => self
                .annotator_index
                .iter()
                .position(|a| a == id)
                .map(Some)
                .ok_or_else(|| Error::UnknownAnnotator(id.to_string())),
            (false, None) => Ok(None),
            (true, None) => Err(Error::ConditioningMismatch(
                "conditioned model needs an annotator".into(),
            )),
            (false, Some(id)) => Err(Error::ConditioningMismatch(format!(
                "unconditioned model was given annotator `{id}`"
            ))),
        }
    }

    pub fn example(
        &self,
        features: FeatureVector,
        target: AnnotationDistribution,
        annotator: Option<&str>,
    ) -> Result<Example> {
        if target.len() != self.classes() {
            return Err(Error::DimensionMismatch {
                expected: self.classes(),
                actual: target.len(),
            });
        }
        self.check_features(&features)?;
        Ok(Example {
            features,
            target,
            annotator: self.resolve_annotator(annotator)?,
        })
    }

    fn check_features(&self, features: &FeatureVector) -> Result<()> {
        match features.max_index() {
            Some(i) if self.feature_dim > 0 && i as usize >= self.feature_dim => {
                Err(Error::DimensionMismatch {
                    expected: self.feature_dim,
                    actual: i as usize + 1,
                })
            }
            _ => Ok(()),
        }
    }

    fn logits(&self, features: &FeatureVector, annotator: Option<usize>) -> Vec<f64> {
        let width = self.width();
        let mut logits = self.params.bias.clone();
        for (c, z) in logits.iter_mut().enumerate() {
            let row = &self.params.weights[c * width..(c + 1) * width];
            if self.feature_dim > 0 {
                for &(j, x) in features.entries() {
                    *z += row[j as usize] * x;
                }
            }
            if let Some(a) = annotator {
                *z += row[self.feature_dim + a];
            }
        }
        logits
    }

    pub fn predict_distribution(
        &self,
        features: &FeatureVector,
        annotator: Option<&str>,
    ) -> Result<AnnotationDistribution> {
        self.check_features(features)?;
        let slot = self.resolve_annotator(annotator)?;
        Ok(AnnotationDistribution::from_normalized(softmax(
            &self.logits(features, slot),
        )))
    }

    /// Argmax of [`Self::predict_distribution`]; ties go to the lowest index.
    pub fn predict_label(&self, features: &FeatureVector, annotator: Option<&str>) -> Result<usize> {
        self.predict_distribution(features, annotator)
            .map(|d| d.argmax())
    }

    pub fn predict_text(&self, text: &str, annotator: Option<&str>) -> Result<AnnotationDistribution> {
        self.predict_distribution(&self.space.featurize(text), annotator)
    }

    /// Predictions for every sample of `split`, in corpus order.
    pub fn predict_split(
        &self,
        corpus: &Corpus,
        split: Split,
        annotator: Option<&str>,
    ) -> Result<Vec<(String, AnnotationDistribution)>> {
        let samples: Vec<_> = corpus.split(split).collect();
        let features = featurize_all(
            &self.space,
            samples.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(),
        );
        samples
            .iter()
            .zip(&features)
            .map(|(s, x)| Ok((s.id.clone(), self.predict_distribution(x, annotator)?)))
            .collect()
    }

    /// Mean cross entropy of the batch plus `l2 / 2 * ||weights||^2`, and
    /// its exact gradient with respect to weights and bias.
    pub fn loss_and_gradient(&self, batch: &[Example], l2: f64) -> (f64, Parameters) {
        assert!(!batch.is_empty(), "empty batch");
        let width = self.width();
        let scale = 1.0 / batch.len() as f64;
        let mut grad = Parameters::zeros(self.classes(), width);
        let mut data_loss = 0.0;
        for ex in batch {
            let logits = self.logits(&ex.features, ex.annotator);
            data_loss += cross_entropy_from_logits(ex.target.probs(), &logits);
            let q = softmax(&logits);
            for (c, (&qc, &pc)) in q.iter().zip(ex.target.probs()).enumerate() {
                let r = (qc - pc) * scale;
                grad.bias[c] += r;
                let row = &mut grad.weights[c * width..(c + 1) * width];
                if self.feature_dim > 0 {
                    for &(j, x) in ex.features.entries() {
                        row[j as usize] += r * x;
                    }
                }
                if let Some(a) = ex.annotator {
                    row[self.feature_dim + a] += r;
                }
            }
        }
        let mut penalty = 0.0;
        for (g, &w) in grad.weights.iter_mut().zip(&self.params.weights) {
            *g += l2 * w;
            penalty += w * w;
        }
        (data_loss * scale + 0.5 * l2 * penalty, grad)
    }

    /// Runs mini-batch gradient descent over `examples`. Each epoch visits
    /// the examples in a fresh seeded permutation. Returns the mean data
    /// loss observed during each epoch.
    pub fn fit(&mut self, examples: &[Example], config: &TrainConfig) -> Result<Vec<f64>> {
        config.validate()?;
        if examples.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        for ex in examples {
            if ex.target.len() != self.classes() {
                return Err(Error::DimensionMismatch {
                    expected: self.classes(),
                    actual: ex.target.len(),
                });
            }
            if ex.annotator.is_some() != self.is_conditioned()
                || ex.annotator.is_some_and(|a| a >= self.annotator_index.len())
            {
                return Err(Error::ConditioningMismatch(
                    "example annotator does not match the model".into(),
                ));
            }
            self.check_features(&ex.features)?;
        }

        let width = self.width();
        let classes = self.classes();
        let lr = config.learning_rate;
        let decay = 1.0 - lr * config.l2;
        let mut rng = SeededRng::new(config.seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        let mut residuals = vec![0.0; config.batch_size.min(examples.len()) * classes];

        for _ in 0..config.epochs {
            rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                let step = lr / batch.len() as f64;
                // Residuals for the whole batch at the current parameters.
                for (b, &i) in batch.iter().enumerate() {
                    let ex = &examples[i];
                    let logits = self.logits(&ex.features, ex.annotator);
                    epoch_loss += cross_entropy_from_logits(ex.target.probs(), &logits);
                    let q = softmax(&logits);
                    for c in 0..classes {
                        residuals[b * classes + c] = q[c] - ex.target.probs()[c];
                    }
                }
                if decay != 1.0 {
                    self.params.weights.iter_mut().for_each(|w| *w *= decay);
                }
                for (b, &i) in batch.iter().enumerate() {
                    let ex = &examples[i];
                    for c in 0..classes {
                        let r = residuals[b * classes + c] * step;
                        self.params.bias[c] -= r;
                        let row = &mut self.params.weights[c * width..(c + 1) * width];
                        if self.feature_dim > 0 {
                            for &(j, x) in ex.features.entries() {
                                row[j as usize] -= r * x;
                            }
                        }
                        if let Some(a) = ex.annotator {
                            row[self.feature_dim + a] -= r;
                        }
                    }
                }
            }
            epoch_losses.push(epoch_loss / examples.len() as f64);
        }
        if !self.params.is_finite() {
            return Err(Error::InvalidModel(
                "training diverged to non-finite parameters; lower the learning rate".into(),
            ));
        }
        self.trained_with = Some(*config);
        Ok(epoch_losses)
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            schema: self.schema.clone(),
            space: self.space,
            kind: self.kind,
            feature_dim: self.feature_dim,
            annotator_index: self.annotator_index.clone(),
            config: self.trained_with,
            bias: self.params.bias.clone(),
            weights: self.params.weights.clone(),
        };
        to_vec_full_precision(&file).map_err(|e| Error::json("<model>", e))
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_slice(bytes).map_err(|e| Error::json("<model>", e))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::InvalidModel(format!(
                "unsupported model format `{}`",
                file.format
            )));
        }
        if file.feature_dim != 0 && file.feature_dim != file.space.dimension() {
            return Err(Error::InvalidModel(format!(
                "feature_dim {} does not match space dimension {}",
                file.feature_dim,
                file.space.dimension()
            )));
        }
        let mut model = Self::with_shape(
            file.schema,
            file.space,
            file.kind,
            file.feature_dim,
            file.annotator_index,
        )?;
        if file.bias.len() != model.params.bias.len() {
            return Err(Error::InvalidModel(format!(
                "expected {} bias values, found {}",
                model.params.bias.len(),
                file.bias.len()
            )));
        }
        if file.weights.len() != model.params.weights.len() {
            return Err(Error::InvalidModel(format!(
                "expected {} weights, found {}",
                model.params.weights.len(),
                file.weights.len()
            )));
        }
        model.params = Parameters {
            weights: file.weights,
            bias: file.bias,
        };
        if !model.params.is_finite() {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        model.trained_with = file.config;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_slice(&bytes).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(path, source),
            other => other,
        })
    }
}

fn check_annotator_index(kind: TargetKind, index: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = index.iter().find(|a| !seen.insert(a.as_str())) {
        return Err(Error::InvalidModel(format!("annotator `{dup}` listed twice")));
    }
    if kind == TargetKind::Conditioned && index.is_empty() {
        return Err(Error::ConditioningMismatch(
            "conditioned model without annotators".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    schema: LabelSchema,
    space: FeatureSpace,
    kind: TargetKind,
    feature_dim: usize,
    annotator_index: Vec<String>,
    config: Option<TrainConfig>,
    bias: Vec<f64>,
    weights: Vec<f64>,
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-sum p_i ln max(q_i, floor)` with `q = softmax(logits)`, via log-softmax.
fn cross_entropy_from_logits(target: &[f64], logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let log_floor = PROB_FLOOR.ln();
    target
        .iter()
        .zip(logits)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &z)| -p * (z - max - log_sum).max(log_floor))
        .sum()
}

/// Featurizes texts in parallel, preserving order.
pub fn featurize_all<'a, I>(space: &FeatureSpace, texts: I) -> Vec<FeatureVector>
where
    I: IntoParallelIterator<Item = &'a str>,
    I::Iter: IndexedParallelIterator,
{
    texts
        .into_par_iter()
        .map(|t| space.featurize(t))
        .collect()
}

/// Training pairs for `kind` drawn from the train split of `corpus`.
pub fn training_examples(
    model: &SoftmaxClassifier,
    corpus: &Corpus,
    kind: TargetKind,
) -> Result<Vec<Example>> {
    let schema = corpus.schema();
    let samples: Vec<_> = corpus.split(Split::Train).collect();
    if samples.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let features = featurize_all(
        model.space(),
        samples.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(),
    );
    let mut examples = Vec::new();
    for (sample, features) in samples.into_iter().zip(features) {
        match kind {
            TargetKind::HardMajority => {
                let label = majority_label(&sample.annotations, schema)?;
                examples.push(model.example(
                    features,
                    AnnotationDistribution::one_hot(schema.len(), label),
                    None,
                )?);
            }
            TargetKind::SoftDistribution => {
                let target = build_distribution(&sample.annotations, schema)?;
                examples.push(model.example(features, target, None)?);
            }
            TargetKind::Conditioned => {
                for a in &sample.annotations {
                    examples.push(model.example(
                        features.clone(),
                        AnnotationDistribution::one_hot(schema.len(), a.label),
                        Some(&a.annotator),
                    )?);
                }
            }
        }
    }
    Ok(examples)
}

/// Trains a classifier on the train split of `corpus`.
pub fn train(
    corpus: &Corpus,
    space: &FeatureSpace,
    kind: TargetKind,
    config: &TrainConfig,
) -> Result<SoftmaxClassifier> {
    config.validate()?;
    let annotators = match kind {
        TargetKind::Conditioned => corpus.annotators().keys().cloned().collect(),
        _ => Vec::new(),
    };
    let mut model = SoftmaxClassifier::zeros(corpus.schema().clone(), *space, kind, annotators)?;
    let examples = training_examples(&model, corpus, kind)?;
    let losses = model.fit(&examples, config)?;
    log::info!(
        "trained {:?} model on {} pairs; final epoch loss {:.4}",
        kind,
        examples.len(),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(model)
}

/// Argmax helper exposed for callers holding raw probability slices.
pub fn predicted_label(probs: &[f64]) -> usize {
    argmax(probs)
}
