//! Blinded preference survey.
//!
//! A bundle pairs, for each of k test samples, the distribution predicted by
//! a majority-label baseline with the one predicted by a multi-label model.
//! Which of the two is shown as "A" is decided by a seeded coin flip and kept
//! server-side; participants only ever receive [`ItemView`]s. Responses go to
//! an append-only JSONL log and are de-blinded when tallied.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::label::{AnnotationDistribution, Corpus, LabelSchema, Split};
use crate::model::SoftmaxClassifier;
use crate::rng::{derive_seed, SeededRng};
use crate::stats::{Preference, PreferenceCounts};

pub const DEFAULT_ITEMS: usize = 10;

/// Anything that maps a text to a label distribution.
pub trait DistributionPredictor {
    fn schema(&self) -> &LabelSchema;
    fn predict_text_distribution(&self, text: &str) -> Result<AnnotationDistribution>;
}

impl DistributionPredictor for SoftmaxClassifier {
    fn schema(&self) -> &LabelSchema {
        SoftmaxClassifier::schema(self)
    }

    fn predict_text_distribution(&self, text: &str) -> Result<AnnotationDistribution> {
        self.predict_text(text, None)
    }
}

impl DistributionPredictor for EnsembleModel {
    fn schema(&self) -> &LabelSchema {
        EnsembleModel::schema(self)
    }

    fn predict_text_distribution(&self, text: &str) -> Result<AnnotationDistribution> {
        self.predict(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "no_difference")]
    NoDifference,
}

impl std::str::FromStr for Choice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Choice::A),
            "B" => Ok(Choice::B),
            "no_difference" => Ok(Choice::NoDifference),
            other => Err(Error::InvalidRequest(format!(
                "choice must be A, B or no_difference, got `{other}`"
            ))),
        }
    }
}

/// Server-side item, provenance included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyItem {
    pub item_id: String,
    pub sample_id: String,
    pub text: String,
    pub dist_a: AnnotationDistribution,
    pub dist_b: AnnotationDistribution,
    /// Side holding the baseline's distribution.
    pub baseline_side: Side,
}

impl SurveyItem {
    /// Translates a blinded choice into what it prefers.
    pub fn deblind(&self, choice: Choice) -> Preference {
        match (choice, self.baseline_side) {
            (Choice::NoDifference, _) => Preference::NoDifference,
            (Choice::A, Side::A) | (Choice::B, Side::B) => Preference::Baseline,
            _ => Preference::MultiLabel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyBundle {
    pub bundle_id: String,
    pub labels: Vec<String>,
    pub seed: u64,
    pub side_seed: u64,
    pub items: Vec<SurveyItem>,
}

/// What a participant sees. Carries no provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub item_id: String,
    pub text: String,
    #[serde(rename = "dist_A")]
    pub dist_a: Vec<f64>,
    #[serde(rename = "dist_B")]
    pub dist_b: Vec<f64>,
    pub labels: Vec<String>,
    /// 1-based position of the item in the bundle.
    pub position: usize,
    pub total: usize,
}

/// Draws `k` test samples and shows both models' predictions side by side.
/// Sides are flipped with a seed derived from `seed`.
pub fn build_bundle(
    corpus: &Corpus,
    baseline: &dyn DistributionPredictor,
    multi_label: &dyn DistributionPredictor,
    k: usize,
    seed: u64,
) -> Result<SurveyBundle> {
    build_bundle_with_side_seed(corpus, baseline, multi_label, k, seed, derive_seed(seed, "sides"))
}

pub fn build_bundle_with_side_seed(
    corpus: &Corpus,
    baseline: &dyn DistributionPredictor,
    multi_label: &dyn DistributionPredictor,
    k: usize,
    seed: u64,
    side_seed: u64,
) -> Result<SurveyBundle> {
    if baseline.schema() != multi_label.schema() || baseline.schema() != corpus.schema() {
        return Err(Error::InvalidRequest("models and corpus use different label schemas".into()));
    }
    let test: Vec<_> = corpus.split(Split::Test).collect();
    if k == 0 || k > test.len() {
        return Err(Error::InvalidRequest(format!(
            "cannot draw {k} items from {} test samples",
            test.len()
        )));
    }
    let picks = SeededRng::new(seed).sample_indices(test.len(), k);
    let mut sides = SeededRng::new(side_seed);
    let mut items = Vec::with_capacity(k);
    for (i, &idx) in picks.iter().enumerate() {
        let sample = test[idx];
        let base = baseline.predict_text_distribution(&sample.text)?;
        let multi = multi_label.predict_text_distribution(&sample.text)?;
        let (dist_a, dist_b, baseline_side) = if sides.coin() {
            (base, multi, Side::A)
        } else {
            (multi, base, Side::B)
        };
        items.push(SurveyItem {
            item_id: format!("item{:02}", i + 1),
            sample_id: sample.id.clone(),
            text: sample.text.clone(),
            dist_a,
            dist_b,
            baseline_side,
        });
    }
    Ok(SurveyBundle {
        bundle_id: format!("{seed:016x}-{k}"),
        labels: corpus.schema().labels().to_vec(),
        seed,
        side_seed,
        items,
    })
}

impl SurveyBundle {
    pub fn item(&self, item_id: &str) -> Option<&SurveyItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn view(&self, position: usize) -> Option<ItemView> {
        let item = self.items.get(position)?;
        Some(ItemView {
            item_id: item.item_id.clone(),
            text: item.text.clone(),
            dist_a: item.dist_a.probs().to_vec(),
            dist_b: item.dist_b.probs().to_vec(),
            labels: self.labels.clone(),
            position: position + 1,
            total: self.items.len(),
        })
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        crate::json::to_vec_full_precision(self).map_err(|e| Error::json("<bundle>", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bundle: Self = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        let mut ids = HashSet::new();
        for item in &bundle.items {
            if !ids.insert(item.item_id.as_str()) {
                return Err(Error::InvalidRequest(format!("duplicate item id `{}`", item.item_id)));
            }
            if item.dist_a.len() != bundle.labels.len() || item.dist_b.len() != bundle.labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: bundle.labels.len(),
                    actual: item.dist_a.len().max(item.dist_b.len()),
                });
            }
        }
        Ok(bundle)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyResponse {
    pub participant_id: String,
    pub item_id: String,
    pub choice: Choice,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: u64,
}

/// Append-only response log, optionally backed by a JSONL file.
#[derive(Debug, Default)]
pub struct ResponseLog {
    path: Option<PathBuf>,
    file: Option<File>,
    entries: Vec<SurveyResponse>,
    seen: HashSet<(String, String)>,
}

impl ResponseLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a log file and replays its existing entries.
    pub fn open(path: &Path) -> Result<Self> {
        let mut log = Self::in_memory();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let response: SurveyResponse =
                    serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
                        row: i as u64 + 1,
                        message: e.to_string(),
                    })?;
                log.insert(response)?;
            }
        }
        log.file = Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?,
        );
        log.path = Some(path.to_path_buf());
        Ok(log)
    }

    fn insert(&mut self, response: SurveyResponse) -> Result<()> {
        let key = (response.participant_id.clone(), response.item_id.clone());
        if !self.seen.insert(key) {
            return Err(Error::DuplicateResponse {
                participant: response.participant_id,
                item_id: response.item_id,
            });
        }
        self.entries.push(response);
        Ok(())
    }

    /// Validates against `bundle`, then appends. Rejected responses leave the
    /// log untouched.
    pub fn record(&mut self, bundle: &SurveyBundle, response: SurveyResponse) -> Result<()> {
        if bundle.item(&response.item_id).is_none() {
            return Err(Error::UnknownItem(response.item_id));
        }
        if self.has_answered(&response.participant_id, &response.item_id) {
            return Err(Error::DuplicateResponse {
                participant: response.participant_id,
                item_id: response.item_id,
            });
        }
        if let Some(file) = &mut self.file {
            let path = self.path.as_deref().unwrap_or(Path::new("<log>"));
            let mut line = serde_json::to_vec(&response).map_err(|e| Error::json(path, e))?;
            line.push(b'\n');
            file.write_all(&line).map_err(|e| Error::io(path, e))?;
            file.flush().map_err(|e| Error::io(path, e))?;
        }
        self.insert(response)
    }

    pub fn has_answered(&self, participant: &str, item_id: &str) -> bool {
        self.seen.contains(&(participant.to_string(), item_id.to_string()))
    }

    pub fn entries(&self) -> &[SurveyResponse] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// First item of the bundle, in bundle order, the participant has not
    /// answered.
    pub fn next_item(&self, bundle: &SurveyBundle, participant: &str) -> Option<ItemView> {
        let position = bundle
            .items
            .iter()
            .position(|item| !self.has_answered(participant, &item.item_id))?;
        bundle.view(position)
    }
}

/// De-blinds every response and counts preferences.
pub fn tally(responses: &[SurveyResponse], bundle: &SurveyBundle) -> Result<PreferenceCounts> {
    let items: HashMap<&str, &SurveyItem> =
        bundle.items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut counts = PreferenceCounts::default();
    for r in responses {
        let item = items
            .get(r.item_id.as_str())
            .ok_or_else(|| Error::UnknownItem(r.item_id.clone()))?;
        counts.add(item.deblind(r.choice));
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSpace;
    use crate::label::{AnnotatedSample, Annotation};
    use crate::model::TargetKind;

    fn corpus(n: usize) -> Corpus {
        let samples = (0..n)
            .map(|i| {
                AnnotatedSample::new(
                    format!("t{i}"),
                    format!("sample text {i}"),
                    vec![Annotation::new("a", i % 3)],
                    Split::Test,
                )
                .unwrap()
            })
            .collect();
        Corpus::new(LabelSchema::hate_speech(), samples).unwrap()
    }

    fn constant(bias: [f64; 3]) -> SoftmaxClassifier {
        let space = FeatureSpace::new(16, None, true).unwrap();
        let mut m = SoftmaxClassifier::bias_only(LabelSchema::hate_speech(), space, TargetKind::SoftDistribution);
        m.parameters_mut().bias.copy_from_slice(&bias);
        m
    }

    fn bundle(seed: u64) -> SurveyBundle {
        build_bundle(&corpus(20), &constant([2.0, 0.0, 0.0]), &constant([0.0, 1.0, 0.5]), 10, seed).unwrap()
    }

    fn response(p: &str, item: &str, choice: Choice) -> SurveyResponse {
        SurveyResponse {
            participant_id: p.into(),
            item_id: item.into(),
            choice,
            timestamp: 0,
        }
    }

    #[test]
    fn bundle_has_k_distinct_items() {
        let b = bundle(4);
        assert_eq!(b.items.len(), 10);
        let ids: HashSet<_> = b.items.iter().map(|i| &i.sample_id).collect();
        assert_eq!(ids.len(), 10);
        for item in &b.items {
            assert_ne!(item.dist_a, item.dist_b);
        }
        assert_eq!(bundle(4), b);
    }

    #[test]
    fn bundle_rejects_oversized_requests() {
        let c = corpus(5);
        let m = constant([0.0; 3]);
        assert!(matches!(build_bundle(&c, &m, &m, 6, 1), Err(Error::InvalidRequest(_))));
        assert!(build_bundle(&c, &m, &m, 5, 1).is_ok());
    }

    #[test]
    fn views_carry_no_provenance() {
        let b = bundle(9);
        let json = serde_json::to_value(b.view(0).unwrap()).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 7);
        for k in ["item_id", "text", "dist_A", "dist_B", "labels", "position", "total"] {
            assert!(keys.iter().any(|x| x == k), "{k}");
        }
        let text = json.to_string();
        assert!(!text.contains("baseline") && !text.contains("sample_id") && !text.contains("seed"));
    }

    #[test]
    fn deblinding() {
        let b = bundle(1);
        let a_item = b.items.iter().find(|i| i.baseline_side == Side::A).unwrap();
        let b_item = b.items.iter().find(|i| i.baseline_side == Side::B).unwrap();
        assert_eq!(a_item.deblind(Choice::A), Preference::Baseline);
        assert_eq!(a_item.deblind(Choice::B), Preference::MultiLabel);
        assert_eq!(b_item.deblind(Choice::A), Preference::MultiLabel);
        assert_eq!(b_item.deblind(Choice::NoDifference), Preference::NoDifference);
    }

    #[test]
    fn duplicate_and_unknown_responses_are_rejected() {
        let b = bundle(2);
        let mut log = ResponseLog::in_memory();
        log.record(&b, response("p1", "item03", Choice::A)).unwrap();
        assert!(matches!(
            log.record(&b, response("p1", "item03", Choice::B)),
            Err(Error::DuplicateResponse { .. })
        ));
        assert!(matches!(
            log.record(&b, response("p1", "item99", Choice::B)),
            Err(Error::UnknownItem(_))
        ));
        assert_eq!(log.len(), 1);
        assert!("maybe".parse::<Choice>().is_err());
        assert_eq!("no_difference".parse::<Choice>().unwrap(), Choice::NoDifference);
    }

    #[test]
    fn items_are_served_in_bundle_order() {
        let b = bundle(3);
        let mut log = ResponseLog::in_memory();
        assert_eq!(log.next_item(&b, "p").unwrap().item_id, "item01");
        log.record(&b, response("p", "item01", Choice::A)).unwrap();
        let next = log.next_item(&b, "p").unwrap();
        assert_eq!((next.item_id.as_str(), next.position, next.total), ("item02", 2, 10));
        for item in &b.items[1..] {
            log.record(&b, response("p", &item.item_id, Choice::B)).unwrap();
        }
        assert!(log.next_item(&b, "p").is_none());
        assert_eq!(log.next_item(&b, "q").unwrap().item_id, "item01");
    }

    #[test]
    fn log_file_replays_and_stays_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("responses.jsonl");
        let b = bundle(5);
        {
            let mut log = ResponseLog::open(&path).unwrap();
            log.record(&b, response("p1", "item01", Choice::A)).unwrap();
            log.record(&b, response("p2", "item01", Choice::NoDifference)).unwrap();
        }
        let before = tally(ResponseLog::open(&path).unwrap().entries(), &b).unwrap();
        let mut log = ResponseLog::open(&path).unwrap();
        assert_eq!(log.len(), 2);
        assert!(log.record(&b, response("p1", "item01", Choice::B)).is_err());
        log.record(&b, response("p1", "item02", Choice::B)).unwrap();
        assert_eq!(tally(&log.entries()[..2], &b).unwrap(), before);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
    }

    #[test]
    fn bundle_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.json");
        let b = bundle(6);
        b.save(&path).unwrap();
        assert_eq!(SurveyBundle::load(&path).unwrap(), b);
    }

    #[test]
    fn tally_counts_and_empty_log() {
        let b = bundle(8);
        assert_eq!(tally(&[], &b).unwrap(), PreferenceCounts::default());
        let mut direct = PreferenceCounts::default();
        let mut responses = Vec::new();
        for (i, item) in b.items.iter().enumerate() {
            let choice = [Choice::A, Choice::B, Choice::NoDifference][i % 3];
            direct.add(item.deblind(choice));
            responses.push(response("p", &item.item_id, choice));
        }
        assert_eq!(tally(&responses, &b).unwrap(), direct);
        assert_eq!(direct.total(), 10);
    }
}
