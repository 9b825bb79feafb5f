//! Instruction-tuning datasets.
//!
//! A prompt has four parts: a scenario, an instruction naming the allowed
//! labels, the text input, and an open response slot. Every (sample,
//! annotation) pair becomes one prompt/completion record whose completion is
//! that annotator's label, so a fine-tuned model can be asked to answer as a
//! specific annotator.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{AnnotatedSample, Annotation, Corpus, LabelSchema};

pub const TEXT_PLACEHOLDER: &str = "{text}";
pub const LABEL_PLACEHOLDER: &str = "{label}";

const SECTIONS: [&str; 4] = ["scenario", "instruction", "input", "response"];

const HATE_SPEECH_TEMPLATE: &str = include_str!("../templates/hate_speech.txt");
const ABUSIVE_CONVERSATION_TEMPLATE: &str = include_str!("../templates/abusive_conversation.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    scenario: String,
    instruction: String,
    input_slot: String,
    response_slot: String,
}

impl PromptTemplate {
    /// `input_slot` must contain `{text}` once. `response_slot` must end with
    /// its only `{label}`; the text before it closes the prompt.
    pub fn new(
        scenario: impl Into<String>,
        instruction: impl Into<String>,
        input_slot: impl Into<String>,
        response_slot: impl Into<String>,
    ) -> Result<Self> {
        let t = Self {
            scenario: scenario.into(),
            instruction: instruction.into(),
            input_slot: input_slot.into(),
            response_slot: response_slot.into(),
        };
        for (name, part) in [("scenario", &t.scenario), ("instruction", &t.instruction)] {
            if part.contains(TEXT_PLACEHOLDER) || part.contains(LABEL_PLACEHOLDER) {
                return Err(Error::Template(format!("{name} must not contain placeholders")));
            }
        }
        expect_once(&t.input_slot, TEXT_PLACEHOLDER, "input")?;
        if t.input_slot.contains(LABEL_PLACEHOLDER) {
            return Err(Error::Template(format!("input must not contain {LABEL_PLACEHOLDER}")));
        }
        expect_once(&t.response_slot, LABEL_PLACEHOLDER, "response")?;
        if t.response_slot.contains(TEXT_PLACEHOLDER) {
            return Err(Error::Template(format!("response must not contain {TEXT_PLACEHOLDER}")));
        }
        if !t.response_slot.ends_with(LABEL_PLACEHOLDER) {
            return Err(Error::Template(format!("response must end with {LABEL_PLACEHOLDER}")));
        }
        Ok(t)
    }

    /// Parses the sectioned file format:
    ///
    /// ```text
    /// [scenario]
    /// ...
    /// [instruction]
    /// ...
    /// [input]
    /// ... {text} ...
    /// [response]
    /// ... {label}
    /// ```
    ///
    /// Sections must appear once each, in this order. Blank lines around a
    /// section body are dropped.
    pub fn parse(source: &str) -> Result<Self> {
        let mut bodies: Vec<Vec<&str>> = Vec::new();
        for line in source.lines() {
            let trimmed = line.trim_end();
            if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                match SECTIONS.get(bodies.len()) {
                    Some(&expected) if expected == name => bodies.push(Vec::new()),
                    Some(&expected) => {
                        return Err(Error::Template(format!(
                            "expected section [{expected}], found [{name}]"
                        )))
                    }
                    None => return Err(Error::Template(format!("unexpected section [{name}]"))),
                }
            } else if let Some(body) = bodies.last_mut() {
                body.push(line);
            } else if !trimmed.is_empty() {
                return Err(Error::Template("text before [scenario]".into()));
            }
        }
        if bodies.len() != SECTIONS.len() {
            return Err(Error::Template(format!(
                "missing section [{}]",
                SECTIONS[bodies.len()]
            )));
        }
        let mut parts = bodies.iter().map(|lines| lines.join("\n").trim_matches('\n').to_string());
        let mut next = || parts.next().expect("four sections");
        Self::new(next(), next(), next(), next())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&source)
    }

    /// The shipped template for a built-in task.
    pub fn builtin(task_id: &str) -> Option<Self> {
        let source = match task_id.replace('-', "_").as_str() {
            "hate_speech" => HATE_SPEECH_TEMPLATE,
            "abusive_conversation" => ABUSIVE_CONVERSATION_TEMPLATE,
            _ => return None,
        };
        Some(Self::parse(source).expect("shipped templates are valid"))
    }

    /// Checks that the instruction names every label of `schema`.
    pub fn check_schema(&self, schema: &LabelSchema) -> Result<()> {
        match schema.labels().iter().find(|l| !self.instruction.contains(l.as_str())) {
            Some(missing) => Err(Error::Template(format!(
                "instruction does not name label `{missing}`"
            ))),
            None => Ok(()),
        }
    }

    pub fn scenario(&self) -> &str {
        &self.scenario
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn input_slot(&self) -> &str {
        &self.input_slot
    }

    pub fn response_slot(&self) -> &str {
        &self.response_slot
    }

    /// Scenario, instruction and input, then the response slot up to the label.
    pub fn render_prompt(&self, text: &str) -> String {
        let (before, after) = self
            .input_slot
            .split_once(TEXT_PLACEHOLDER)
            .expect("validated placeholder");
        let response_prefix = &self.response_slot[..self.response_slot.len() - LABEL_PLACEHOLDER.len()];
        let mut out = String::with_capacity(
            self.scenario.len() + self.instruction.len() + self.input_slot.len() + text.len() + 64,
        );
        out.push_str(&self.scenario);
        out.push_str("\n\n");
        out.push_str(&self.instruction);
        out.push_str("\n\n");
        out.push_str(before);
        out.push_str(text);
        out.push_str(after);
        out.push_str("\n\n");
        out.push_str(response_prefix);
        out
    }
}

fn expect_once(part: &str, placeholder: &str, section: &str) -> Result<()> {
    match part.matches(placeholder).count() {
        1 => Ok(()),
        0 => Err(Error::Template(format!("{section} lacks {placeholder}"))),
        n => Err(Error::Template(format!("{section} has {placeholder} {n} times"))),
    }
}

/// One prompt/completion pair. Field order is the JSONL column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub prompt: String,
    pub completion: String,
    pub sample_id: String,
    pub annotator_id: String,
}

pub fn build_record(
    sample: &AnnotatedSample,
    annotation: &Annotation,
    template: &PromptTemplate,
    schema: &LabelSchema,
) -> Result<InstructionRecord> {
    if !sample.annotations.contains(annotation) {
        return Err(Error::InvalidSample {
            sample_id: sample.id.clone(),
            message: format!("no annotation by `{}` with that label", annotation.annotator),
        });
    }
    let label = schema.name(annotation.label).ok_or(Error::DimensionMismatch {
        expected: schema.len(),
        actual: annotation.label + 1,
    })?;
    Ok(InstructionRecord {
        prompt: template.render_prompt(&sample.text),
        completion: label.to_string(),
        sample_id: sample.id.clone(),
        annotator_id: annotation.annotator.clone(),
    })
}

/// Records for every (sample, annotation) pair, optionally for one annotator
/// only, sorted by sample id then annotator id.
pub fn build_dataset(
    corpus: &Corpus,
    template: &PromptTemplate,
    annotator: Option<&str>,
) -> Result<Vec<InstructionRecord>> {
    if corpus.is_empty() {
        return Err(Error::InvalidCorpus("no samples to export".into()));
    }
    if let Some(id) = annotator {
        if !corpus.annotators().contains_key(id) {
            return Err(Error::UnknownAnnotator(id.to_string()));
        }
    }
    let mut records = Vec::new();
    for sample in corpus.samples() {
        for a in &sample.annotations {
            if annotator.is_none_or(|id| id == a.annotator) {
                records.push(build_record(sample, a, template, corpus.schema())?);
            }
        }
    }
    records.sort_by(|a, b| {
        (a.sample_id.as_str(), a.annotator_id.as_str())
            .cmp(&(b.sample_id.as_str(), b.annotator_id.as_str()))
    });
    Ok(records)
}

pub fn write_jsonl<W: Write>(records: &[InstructionRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Writes the dataset to `path` and returns the number of records.
pub fn export_dataset(
    corpus: &Corpus,
    template: &PromptTemplate,
    annotator: Option<&str>,
    path: &Path,
) -> Result<usize> {
    let records = build_dataset(corpus, template, annotator)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(&records, BufWriter::new(file)).map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

/// Maps a model completion back to a label index.
///
/// Surrounding whitespace and trailing punctuation are dropped, then the
/// rest must equal exactly one label name, ignoring case.
pub fn parse_response(completion: &str, schema: &LabelSchema) -> Result<usize> {
    let cleaned = completion
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase();
    let mut hits = schema
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.to_lowercase() == cleaned)
        .map(|(i, _)| i);
    match (hits.next(), hits.next()) {
        (Some(i), None) => Ok(i),
        _ => Err(Error::Unparseable(completion.to_string())),
    }
}
