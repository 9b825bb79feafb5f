//! Loaders for the two input CSV shapes and the canonical corpus JSONL.
//!
//! Input CSV files carry a header row with `id`, `text` and (optionally)
//! `split` columns. In the `slots` shape the remaining label columns are
//! named `label_1..label_k` and every row holds k anonymous annotations. In
//! the `identified` shape every remaining column is an annotator name and an
//! empty cell means that annotator did not label the row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{AnnotatedSample, Annotation, Corpus, LabelSchema, Split};

/// Column layout of an input CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusShape {
    /// Positional anonymous annotations (`label_1..label_k`).
    Slots,
    /// One column per named annotator; empty cell = not annotated.
    Identified,
}

impl FromStr for CorpusShape {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "slots" => Ok(CorpusShape::Slots),
            "identified" => Ok(CorpusShape::Identified),
            other => Err(format!("unknown corpus shape `{other}`")),
        }
    }
}

/// Synthetic annotator id for the k-th positional annotation (0-based).
pub fn slot_id(k: usize) -> String {
    format!("slot_{k}")
}

struct Layout {
    id: usize,
    text: usize,
    split: Option<usize>,
    /// (column index, annotator id) in column order.
    annotators: Vec<(usize, String)>,
}

fn layout(headers: &csv::StringRecord, shape: CorpusShape) -> Result<Layout> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let header_error = |message: String| Error::MalformedRow { row: 1, message };
    let id = find("id").ok_or_else(|| header_error("missing `id` column".into()))?;
    let text = find("text").ok_or_else(|| header_error("missing `text` column".into()))?;
    let split = find("split");

    let mut annotators = Vec::new();
    match shape {
        CorpusShape::Slots => {
            let mut numbered = Vec::new();
            for (col, h) in headers.iter().enumerate() {
                let h = h.trim();
                if col == id || col == text || Some(col) == split {
                    continue;
                }
                let n = h
                    .strip_prefix("label_")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| {
                        header_error(format!("unexpected column `{h}` in slots shape"))
                    })?;
                numbered.push((n, col));
            }
            numbered.sort_unstable();
            for (k, &(n, col)) in numbered.iter().enumerate() {
                if n != k + 1 {
                    return Err(header_error(format!(
                        "label columns must be label_1..label_{}; found label_{n}",
                        numbered.len()
                    )));
                }
                annotators.push((col, slot_id(k)));
            }
        }
        CorpusShape::Identified => {
            for (col, h) in headers.iter().enumerate() {
                if col == id || col == text || Some(col) == split {
                    continue;
                }
                let name = h.trim();
                if name.is_empty() {
                    return Err(header_error(format!("column {} has an empty name", col + 1)));
                }
                if annotators.iter().any(|(_, a)| a == name) {
                    return Err(header_error(format!("duplicate annotator column `{name}`")));
                }
                annotators.push((col, name.to_string()));
            }
        }
    }
    if annotators.is_empty() {
        return Err(header_error("no annotation columns".into()));
    }
    Ok(Layout {
        id,
        text,
        split,
        annotators,
    })
}

/// Reads an input CSV into a validated corpus.
///
/// `default_split` is used when the file has no `split` column, or the cell
/// is empty.
pub fn ingest(
    path: &Path,
    shape: CorpusShape,
    schema: &LabelSchema,
    default_split: Option<Split>,
) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, shape, schema, default_split).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    shape: CorpusShape,
    schema: &LabelSchema,
    default_split: Option<Split>,
) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let csv_err = |source| Error::Csv {
        path: "<input>".into(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let layout = layout(&headers, shape)?;

    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |message: String| Error::MalformedRow { row, message };

        let id = record.get(layout.id).unwrap_or("").trim();
        if id.is_empty() {
            return Err(malformed("missing id".into()));
        }
        let text = record.get(layout.text).unwrap_or("");
        if text.trim().is_empty() {
            return Err(malformed("missing text".into()));
        }
        let split = match layout.split.and_then(|c| record.get(c)).map(str::trim) {
            Some(cell) if !cell.is_empty() => Split::from_str(cell).map_err(malformed)?,
            _ => default_split
                .ok_or_else(|| malformed("no split given in file or on the command line".into()))?,
        };

        let mut annotations = Vec::new();
        for (col, annotator) in &layout.annotators {
            let token = record.get(*col).unwrap_or("").trim();
            if token.is_empty() {
                if shape == CorpusShape::Slots {
                    return Err(malformed(format!("empty label cell for {annotator}")));
                }
                continue;
            }
            let label = schema.index_of(token).ok_or_else(|| Error::SchemaMismatch {
                row,
                message: format!(
                    "label `{token}` is not in schema `{}`",
                    schema.task_id()
                ),
            })?;
            annotations.push(Annotation::new(annotator.clone(), label));
        }
        if annotations.is_empty() {
            return Err(malformed("row has no annotations".into()));
        }
        samples.push(
            AnnotatedSample::new(id, text, annotations, split).map_err(|e| malformed(e.to_string()))?,
        );
    }
    Corpus::new(schema.clone(), samples)
}

#[derive(Serialize, Deserialize)]
struct JsonlAnnotation {
    annotator: String,
    label: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlSample {
    id: String,
    text: String,
    split: Split,
    annotations: Vec<JsonlAnnotation>,
}

/// Writes the canonical one-sample-per-line JSONL form.
pub fn write_corpus_jsonl<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    let schema = corpus.schema();
    for sample in corpus.samples() {
        let line = JsonlSample {
            id: sample.id.clone(),
            text: sample.text.clone(),
            split: sample.split,
            annotations: sample
                .annotations
                .iter()
                .map(|a| JsonlAnnotation {
                    annotator: a.annotator.clone(),
                    label: schema.labels()[a.label].clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus_jsonl(corpus, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_corpus_jsonl<R: BufRead>(reader: R, schema: &LabelSchema) -> Result<Corpus> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row = i as u64 + 1;
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonlSample = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        let annotations = raw
            .annotations
            .into_iter()
            .map(|a| {
                schema
                    .index_of(&a.label)
                    .map(|label| Annotation::new(a.annotator, label))
                    .ok_or_else(|| Error::SchemaMismatch {
                        row,
                        message: format!(
                            "label `{}` is not in schema `{}`",
                            a.label,
                            schema.task_id()
                        ),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(
            AnnotatedSample::new(raw.id, raw.text, annotations, raw.split).map_err(|e| {
                Error::MalformedRow {
                    row,
                    message: e.to_string(),
                }
            })?,
        );
    }
    Corpus::new(schema.clone(), samples)
}

pub fn load_corpus(path: &Path, schema: &LabelSchema) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus_jsonl(BufReader::new(file), schema).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
