//! Seeded synthetic crowd-labelled corpus.
//!
//! Each sample has a primary and a secondary class and an ambiguity level.
//! Its text mixes class-specific words from both classes (in proportion to
//! the ambiguity) with shared filler words. Each of five annotators first
//! perceives either the primary or the secondary class, with the same
//! ambiguity, and then reports a label through a personal confusion matrix.
//! Annotation distributions therefore vary with the text, which is the
//! situation soft-label training is meant for.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::label::{AnnotatedSample, Annotation, Corpus, LabelSchema, Split};
use crate::rng::SeededRng;

/// Row = perceived class, column = reported label. Classes follow the
/// hate-speech schema order: Hate, Offensive, Normal.
pub const CONFUSION: [[[f64; 3]; 3]; 5] = [
    // careful
    [[0.85, 0.10, 0.05], [0.05, 0.85, 0.10], [0.02, 0.08, 0.90]],
    // merges hate and offensive
    [[0.60, 0.35, 0.05], [0.30, 0.60, 0.10], [0.02, 0.10, 0.88]],
    // lenient
    [[0.55, 0.25, 0.20], [0.05, 0.60, 0.35], [0.01, 0.04, 0.95]],
    // strict
    [[0.90, 0.08, 0.02], [0.25, 0.70, 0.05], [0.05, 0.25, 0.70]],
    // noisy
    [[0.50, 0.25, 0.25], [0.25, 0.50, 0.25], [0.25, 0.25, 0.50]],
];

pub const CLASS_PRIOR: [f64; 3] = [0.25, 0.35, 0.40];

const CLASS_VOCAB: usize = 40;
const FILLER_VOCAB: usize = 200;
const CLASS_PREFIX: [&str; 3] = ["hq", "ok", "nz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub samples: usize,
    pub tokens_per_sample: usize,
    /// Share of tokens drawn from class vocabularies; the rest is filler.
    pub signal_percent: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 5000,
            tokens_per_sample: 24,
            signal_percent: 70,
            seed: 0,
        }
    }
}

pub fn annotator_id(j: usize) -> String {
    format!("ann_{}", j + 1)
}

fn categorical(rng: &mut SeededRng, probs: &[f64]) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn class_word(class: usize, rng: &mut SeededRng) -> String {
    format!("{}{}", CLASS_PREFIX[class], rng.below(CLASS_VOCAB))
}

fn filler_word(rng: &mut SeededRng) -> String {
    format!("w{}", rng.below(FILLER_VOCAB))
}

/// Builds the corpus with a 70/15/15 train/validation/test split.
pub fn generate(config: &SynthConfig) -> Result<Corpus> {
    if config.samples < 3 || config.tokens_per_sample == 0 || config.signal_percent > 100 {
        return Err(Error::InvalidConfig(format!("unusable synthetic settings {config:?}")));
    }
    let mut rng = SeededRng::new(config.seed);
    let mut order: Vec<usize> = (0..config.samples).collect();
    rng.shuffle(&mut order);
    let mut split = vec![Split::Train; config.samples];
    let n_train = config.samples * 70 / 100;
    let n_val = config.samples * 15 / 100;
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }

    let signal = f64::from(config.signal_percent) / 100.0;
    let width = config.samples.to_string().len();
    let mut samples = Vec::with_capacity(config.samples);
    for (i, &split) in split.iter().enumerate() {
        let primary = categorical(&mut rng, &CLASS_PRIOR);
        let secondary = (primary + 1 + rng.below(2)) % 3;
        let ambiguity = 0.5 * rng.next_f64();

        let mut words = Vec::with_capacity(config.tokens_per_sample);
        for _ in 0..config.tokens_per_sample {
            if rng.next_f64() < signal {
                let class = if rng.next_f64() < ambiguity { secondary } else { primary };
                words.push(class_word(class, &mut rng));
            } else {
                words.push(filler_word(&mut rng));
            }
        }

        let annotations = CONFUSION
            .iter()
            .enumerate()
            .map(|(j, matrix)| {
                let perceived = if rng.next_f64() < ambiguity { secondary } else { primary };
                Annotation::new(annotator_id(j), categorical(&mut rng, &matrix[perceived]))
            })
            .collect();
        samples.push(AnnotatedSample::new(
            format!("s{i:0width$}"),
            words.join(" "),
            annotations,
            split,
        )?);
    }
    Corpus::new(LabelSchema::hate_speech(), samples)
}

/// Writes `id,text,split,label_1..label_k` with label names, annotations in
/// stored order.
pub fn write_slots_csv<W: Write>(corpus: &Corpus, out: W) -> Result<()> {
    let width = corpus.samples().first().map_or(0, |s| s.annotations.len());
    let to_err = |e: csv::Error| Error::Csv {
        path: "<csv>".into(),
        source: e,
    };
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "text".into(), "split".into()];
    header.extend((1..=width).map(|k| format!("label_{k}")));
    w.write_record(&header).map_err(to_err)?;
    for s in corpus.samples() {
        if s.annotations.len() != width {
            return Err(Error::InvalidCorpus(format!(
                "sample `{}` has {} annotations, expected {width}",
                s.id,
                s.annotations.len()
            )));
        }
        let mut row = vec![s.id.clone(), s.text.clone(), s.split.as_str().to_string()];
        row.extend(
            s.annotations
                .iter()
                .map(|a| corpus.schema().name(a.label).expect("valid label").to_string()),
        );
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn save_slots_csv(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_slots_csv(corpus, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
