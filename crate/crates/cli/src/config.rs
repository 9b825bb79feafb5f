//! Run configuration: an optional JSON file, overridden by flags.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crowdlabel::ensemble::{AccuracyReference, StreamMode, MIN_SELECTION};
use crowdlabel::features::NgramRange;
use crowdlabel::{FeatureSpace, LabelSchema, TrainConfig};

/// Bad flags or configuration. Maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub l2: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub mode: Option<StreamMode>,
    pub n: Option<usize>,
    pub accuracy_reference: Option<AccuracyReference>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurveySection {
    pub k: Option<usize>,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: Option<String>,
    pub schema_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub features: Option<FeatureSpace>,
    pub train: TrainSection,
    pub ensemble: EnsembleSection,
    pub survey: SurveySection,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

/// Label schema flags.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SchemaArgs {
    /// Built-in task: hate_speech or abusive_conversation
    #[arg(long)]
    pub task: Option<String>,
    /// JSON label schema file: {"task_id": ..., "labels": [...]}
    #[arg(long, conflicts_with = "task")]
    pub schema: Option<PathBuf>,
}

/// Feature hashing flags.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct FeatureArgs {
    /// Hash space size, a power of two
    #[arg(long)]
    pub dimension: Option<usize>,
    /// Character n-gram range such as 3..5, or "none"
    #[arg(long, value_parser = parse_ngrams)]
    pub ngrams: Option<NgramSetting>,
    /// Keep letter case when tokenizing
    #[arg(long)]
    pub keep_case: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NgramSetting(pub Option<NgramRange>);

fn parse_ngrams(s: &str) -> Result<NgramSetting, String> {
    if s == "none" {
        return Ok(NgramSetting(None));
    }
    let (min, max) = parse_range(s)?;
    Ok(NgramSetting(Some(NgramRange { min, max })))
}

/// `a..b`, `a..=b` (both inclusive) or a single number.
pub fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected a range like 3..5, got `{s}`");
    let (lo, hi) = match s.split_once("..") {
        Some((lo, hi)) => (lo, hi.strip_prefix('=').unwrap_or(hi)),
        None => (s, s),
    };
    let lo = lo.trim().parse().map_err(|_| bad())?;
    let hi = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// Optimizer flags.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// L2 penalty on weights
    #[arg(long)]
    pub l2: Option<f64>,
}

/// Settings after merging defaults, the config file and flags. Embedded in
/// every report.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub task: String,
    pub labels: Vec<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureSpace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

pub struct Settings {
    pub file: RunConfig,
    pub seed: u64,
}

impl Settings {
    pub fn new(config: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Self> {
        let file = match config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let seed = seed.or(file.seed).unwrap_or(0);
        Ok(Self { file, seed })
    }

    pub fn schema(&self, args: &SchemaArgs) -> anyhow::Result<LabelSchema> {
        if let Some(path) = args.schema.as_ref().or(if args.task.is_none() {
            self.file.schema_file.as_ref()
        } else {
            None
        }) {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading schema {}", path.display()))?;
            return serde_json::from_str(&text)
                .with_context(|| format!("schema {}", path.display()));
        }
        let task = args
            .task
            .as_deref()
            .or(self.file.task.as_deref())
            .unwrap_or("hate_speech");
        LabelSchema::builtin(task).ok_or_else(|| {
            usage(format!(
                "unknown task `{task}` (expected hate_speech or abusive_conversation, or pass --schema)"
            ))
        })
    }

    pub fn space(&self, args: &FeatureArgs) -> anyhow::Result<FeatureSpace> {
        let base = self.file.features.unwrap_or_default();
        let dimension = args.dimension.unwrap_or(base.dimension());
        let ngrams = args.ngrams.map_or(base.char_ngrams(), |s| s.0);
        let lowercase = base.lowercase() && !args.keep_case;
        FeatureSpace::new(dimension, ngrams, lowercase).map_err(|e| usage(e.to_string()))
    }

    pub fn train(&self, args: &TrainArgs) -> anyhow::Result<TrainConfig> {
        let d = TrainConfig::default();
        let s = &self.file.train;
        let config = TrainConfig {
            learning_rate: args.learning_rate.or(s.learning_rate).unwrap_or(d.learning_rate),
            epochs: args.epochs.or(s.epochs).unwrap_or(d.epochs),
            batch_size: args.batch_size.or(s.batch_size).unwrap_or(d.batch_size),
            l2: args.l2.or(s.l2).unwrap_or(d.l2),
            seed: self.seed,
        };
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }

    pub fn corpus_path(&self, flag: Option<&PathBuf>) -> anyhow::Result<PathBuf> {
        flag.or(self.file.corpus.as_ref())
            .cloned()
            .ok_or_else(|| usage("no corpus given (use --corpus or the `corpus` config key)"))
    }

    pub fn ensemble_mode(&self, flag: Option<StreamMode>) -> StreamMode {
        flag.or(self.file.ensemble.mode).unwrap_or(StreamMode::Identified)
    }

    pub fn ensemble_n(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.ensemble.n).unwrap_or(MIN_SELECTION)
    }

    pub fn accuracy_reference(&self, flag: Option<AccuracyReference>) -> AccuracyReference {
        flag.or(self.file.ensemble.accuracy_reference).unwrap_or_default()
    }

    pub fn survey_k(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.survey.k).unwrap_or(crowdlabel::survey::DEFAULT_ITEMS)
    }

    pub fn resolved(
        &self,
        schema: &LabelSchema,
        features: Option<FeatureSpace>,
        train: Option<TrainConfig>,
    ) -> Resolved {
        Resolved {
            task: schema.task_id().to_string(),
            labels: schema.labels().to_vec(),
            seed: self.seed,
            features,
            train,
        }
    }
}
