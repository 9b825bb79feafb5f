//! Cross-entropy evaluation against annotation distributions and the
//! per-category preference test for survey counts.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{build_distribution, majority_label, AnnotationDistribution, Corpus, Split};
use crate::model::PROB_FLOOR;

/// `-sum p_i ln max(q_i, 1e-12)` in nats.
pub fn cross_entropy(p: &AnnotationDistribution, q: &AnnotationDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| -pi * qi.max(PROB_FLOOR).ln())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub cross_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub per_sample: Vec<SampleScore>,
    pub mean: f64,
    pub accuracy_vs_majority: f64,
}

/// Scores predictions for the test split of `corpus`.
pub fn evaluate(predictions: &[(String, AnnotationDistribution)], corpus: &Corpus) -> Result<EvalReport> {
    evaluate_split(predictions, corpus, Split::Test)
}

/// Scores one prediction per sample of `split`, matched by sample id.
pub fn evaluate_split(
    predictions: &[(String, AnnotationDistribution)],
    corpus: &Corpus,
    split: Split,
) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &AnnotationDistribution> = HashMap::new();
    for (id, dist) in predictions {
        if by_id.insert(id.as_str(), dist).is_some() {
            return Err(Error::Alignment(format!("duplicate prediction for `{id}`")));
        }
    }
    let schema = corpus.schema();
    let mut per_sample = Vec::new();
    let mut correct = 0usize;
    for sample in corpus.split(split) {
        let q = by_id
            .remove(sample.id.as_str())
            .ok_or_else(|| Error::Alignment(format!("no prediction for sample `{}`", sample.id)))?;
        let p = build_distribution(&sample.annotations, schema)?;
        per_sample.push(SampleScore {
            sample_id: sample.id.clone(),
            cross_entropy: cross_entropy(&p, q)?,
        });
        if q.argmax() == majority_label(&sample.annotations, schema)? {
            correct += 1;
        }
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::Alignment(format!(
            "prediction for `{extra}` has no sample in the {split} split"
        )));
    }
    if per_sample.is_empty() {
        return Err(Error::EmptySplit(split.as_str()));
    }
    let n = per_sample.len() as f64;
    Ok(EvalReport {
        split,
        mean: per_sample.iter().map(|s| s.cross_entropy).sum::<f64>() / n,
        accuracy_vs_majority: correct as f64 / n,
        per_sample,
    })
}

/// `ln C(n, k)` as a sum of `ln((n - k' + i) / i)` over the shorter side.
fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (1..=k)
        .map(|i| ((n - k + i) as f64 / i as f64).ln())
        .sum()
}

fn check_binomial(k: u64, n: u64, p0: f64) -> Result<()> {
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds n = {n}")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::Domain(format!("null probability {p0} outside (0, 1)")));
    }
    Ok(())
}

/// `ln sum_{i in range} P(X = i)` for `X ~ Binomial(n, p0)`, walking away
/// from `start` by the pmf ratio recurrence.
fn log_tail_sum(n: u64, p0: f64, start: u64, upward: bool) -> f64 {
    let ln_p = p0.ln();
    let ln_q = (-p0).ln_1p();
    let ln_odds = ln_p - ln_q;
    let mut log_term = ln_choose(n, start) + start as f64 * ln_p + (n - start) as f64 * ln_q;
    let mut terms = vec![log_term];
    let mut i = start;
    loop {
        if upward {
            if i == n {
                break;
            }
            log_term += ((n - i) as f64 / (i + 1) as f64).ln() + ln_odds;
            i += 1;
        } else {
            if i == 0 {
                break;
            }
            log_term += (i as f64 / (n - i + 1) as f64).ln() - ln_odds;
            i -= 1;
        }
        terms.push(log_term);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Smallest terms first.
    terms.sort_by(f64::total_cmp);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Natural log of the exact upper tail `P(X >= k)`, `X ~ Binomial(n, p0)`.
pub fn binomial_log_pvalue(k: u64, n: u64, p0: f64) -> Result<f64> {
    check_binomial(k, n, p0)?;
    if k == 0 {
        return Ok(0.0);
    }
    if k as f64 > n as f64 * p0 {
        // Upper tail is the small one: sum it directly.
        Ok(log_tail_sum(n, p0, k, true))
    } else {
        let lower = log_tail_sum(n, p0, k - 1, false).exp();
        Ok((-lower).ln_1p())
    }
}

/// Exact one-sided upper tail `P(X >= k)` for `X ~ Binomial(n, p0)`.
pub fn binomial_pvalue(k: u64, n: u64, p0: f64) -> Result<f64> {
    binomial_log_pvalue(k, n, p0).map(f64::exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Baseline,
    MultiLabel,
    NoDifference,
}

impl Preference {
    pub const ALL: [Preference; 3] = [
        Preference::Baseline,
        Preference::MultiLabel,
        Preference::NoDifference,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            Preference::Baseline => "Baseline",
            Preference::MultiLabel => "Multi-label model",
            Preference::NoDifference => "No difference",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceCounts {
    pub baseline: u64,
    pub multi_label: u64,
    pub no_difference: u64,
}

impl PreferenceCounts {
    pub fn new(baseline: u64, multi_label: u64, no_difference: u64) -> Self {
        Self {
            baseline,
            multi_label,
            no_difference,
        }
    }

    pub fn total(&self) -> u64 {
        self.baseline + self.multi_label + self.no_difference
    }

    pub fn get(&self, category: Preference) -> u64 {
        match category {
            Preference::Baseline => self.baseline,
            Preference::MultiLabel => self.multi_label,
            Preference::NoDifference => self.no_difference,
        }
    }

    pub fn add(&mut self, category: Preference) {
        match category {
            Preference::Baseline => self.baseline += 1,
            Preference::MultiLabel => self.multi_label += 1,
            Preference::NoDifference => self.no_difference += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub preference: Preference,
    pub count: u64,
    pub proportion: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub null_prob: f64,
    pub total: u64,
    pub per_category: Vec<CategoryResult>,
}

pub const UNIFORM_NULL: f64 = 1.0 / 3.0;

/// One-sided exact binomial test of each category's count against `null_prob`.
pub fn preference_test(counts: &PreferenceCounts, null_prob: f64) -> Result<TestResult> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::Domain("no survey responses to test".into()));
    }
    let per_category = Preference::ALL
        .iter()
        .map(|&preference| {
            let count = counts.get(preference);
            Ok(CategoryResult {
                preference,
                count,
                proportion: count as f64 / total as f64,
                p_value: binomial_pvalue(count, total, null_prob)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestResult {
        null_prob,
        total,
        per_category,
    })
}

/// Four-decimal rendering; anything below 5e-5 prints as `0.0000`.
pub fn format_p_value(p: f64) -> String {
    format!("{p:.4}")
}

impl TestResult {
    /// Plain-text table with Counts, Proportion and P-value columns.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>8} {:>12} {:>10}",
            "Preference", "Counts", "Proportion", "P-value"
        );
        for c in &self.per_category {
            let _ = writeln!(
                out,
                "{:<20} {:>8} {:>12.4} {:>10}",
                c.preference.display_name(),
                c.count,
                c.proportion,
                format_p_value(c.p_value)
            );
        }
        let _ = writeln!(out, "{:<20} {:>8}", "Total", self.total);
        out
    }
}
