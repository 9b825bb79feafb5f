//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num::{BigInt, BigRational, One, ToPrimitive, Zero};

use crowdlabel::ensemble::{
    aggregate, select_top_n, sweep_top_n, train_ensemble, AccuracyReference, StreamMode,
    SubModel, SubModelRecord,
};
use crowdlabel::features::NgramRange;
use crowdlabel::ingest::{ingest, load_corpus, save_corpus};
use crowdlabel::model::{Example, SoftmaxClassifier};
use crowdlabel::prompt::{build_record, export_dataset, parse_response, PromptTemplate};
use crowdlabel::rng::SeededRng;
use crowdlabel::stats::{binomial_pvalue, evaluate, preference_test, Preference, UNIFORM_NULL};
use crowdlabel::synth::{self, SynthConfig};
use crowdlabel::{
    AnnotatedSample, Annotation, AnnotationDistribution, Corpus, CorpusShape, FeatureSpace,
    FeatureVector, LabelSchema, Split, TargetKind, TrainConfig,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_distribution(rng: &mut SeededRng, classes: usize) -> AnnotationDistribution {
    let raw: Vec<f64> = (0..classes).map(|_| rng.next_f64() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let rest: f64 = probs[1..].iter().sum();
    probs[0] = 1.0 - rest;
    AnnotationDistribution::new(probs).unwrap()
}

fn schema_of(classes: usize) -> LabelSchema {
    LabelSchema::new("toy", (0..classes).map(|c| format!("c{c}")).collect()).unwrap()
}

// ---------------------------------------------------------------------------

fn preference_survey_counts() -> Check {
    let cases = [
        ([118, 198, 44], ["0.3278", "0.5500", "0.1222"], 0.6078, 0.01),
        ([152, 194, 14], ["0.4222", "0.5389", "0.0389"], 0.0003, 0.0005),
    ];
    let mut detail = Vec::new();
    for (counts, proportions, baseline_p, tol) in cases {
        let counts = crowdlabel::PreferenceCounts::new(counts[0], counts[1], counts[2]);
        let result = preference_test(&counts, UNIFORM_NULL).map_err(|e| e.to_string())?;
        ensure(result.total == 360, "total is not 360")?;
        for (row, expected) in result.per_category.iter().zip(proportions) {
            let shown = format!("{:.4}", row.proportion);
            ensure(shown == expected, format!("{:?} proportion {shown} != {expected}", row.preference))?;
        }
        let p = |pref: Preference| {
            result
                .per_category
                .iter()
                .find(|r| r.preference == pref)
                .map(|r| r.p_value)
                .unwrap()
        };
        let (b, m, n) = (p(Preference::Baseline), p(Preference::MultiLabel), p(Preference::NoDifference));
        ensure((b - baseline_p).abs() <= tol, format!("baseline p {b} not within {tol} of {baseline_p}"))?;
        ensure(m < 1e-6, format!("multi-label p {m} not < 1e-6"))?;
        ensure(n >= 0.999, format!("no-difference p {n} not >= 0.999"))?;
        detail.push(format!("p=({b:.4}, {m:.2e}, {n:.4})"));
    }
    Ok(detail.join("; "))
}

/// P(X >= k) for X ~ Bin(n, a/b), as an exact rational.
fn exact_upper_tail(k: u64, n: u64, a: u64, b: u64) -> BigRational {
    let a = BigInt::from(a);
    let rest = BigInt::from(b) - &a;
    let mut numerator = BigInt::zero();
    let mut choose = BigInt::one();
    for i in 0..=n {
        if i >= k {
            numerator += &choose * num::pow(a.clone(), i as usize) * num::pow(rest.clone(), (n - i) as usize);
        }
        choose = choose * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    BigRational::new(numerator, num::pow(BigInt::from(b), n as usize))
}

fn binomial_oracle() -> Check {
    let nulls: [(u64, u64, f64); 3] = [(1, 10, 0.1), (1, 3, 1.0 / 3.0), (1, 2, 0.5)];
    let mut rng = SeededRng::new(0x5eed);
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut attempts = 0;
    while checked < 200 {
        attempts += 1;
        ensure(attempts < 5000, "could not build a 200-case grid")?;
        let (a, b, p0) = nulls[attempts % 3];
        let n = match attempts % 20 {
            0 => 500,
            1 => 1,
            _ => 1 + rng.below(500) as u64,
        };
        let k = match attempts % 7 {
            0 => 0,
            1 => n,
            _ => rng.below(n as usize + 1) as u64,
        };
        let exact = exact_upper_tail(k, n, a, b).to_f64().unwrap();
        if exact < 1e-300 {
            continue;
        }
        let got = binomial_pvalue(k, n, p0).map_err(|e| e.to_string())?;
        let rel = (got - exact).abs() / exact;
        worst = worst.max(rel);
        ensure(rel < 1e-10, format!("k={k} n={n} p0={p0}: {got} vs {exact} (rel {rel:e})"))?;
        checked += 1;
    }
    Ok(format!(
        "{checked} cases ({} skipped below 1e-300), worst relative error {worst:.2e}",
        attempts - checked
    ))
}

fn random_model(rng: &mut SeededRng) -> (SoftmaxClassifier, Vec<Example>, f64) {
    let classes = 2 + rng.below(4);
    let dimension = 1 << (2 + rng.below(4));
    let space = FeatureSpace::new(dimension, None, true).unwrap();
    let conditioned = rng.coin();
    let annotators: Vec<String> = if conditioned {
        (0..1 + rng.below(4)).map(|a| format!("a{a}")).collect()
    } else {
        Vec::new()
    };
    let kind = if conditioned { TargetKind::Conditioned } else { TargetKind::SoftDistribution };
    let mut model = SoftmaxClassifier::zeros(schema_of(classes), space, kind, annotators.clone()).unwrap();
    for w in model.parameters_mut().weights.iter_mut() {
        *w = 2.0 * rng.next_f64() - 1.0;
    }
    for b in model.parameters_mut().bias.iter_mut() {
        *b = 2.0 * rng.next_f64() - 1.0;
    }
    let batch = (0..1 + rng.below(5))
        .map(|_| {
            let entries = (0..1 + rng.below(dimension)).map(|_| (rng.below(dimension) as u32, 2.0 * rng.next_f64() - 1.0));
            let features = FeatureVector::from_entries(entries.collect::<Vec<_>>());
            let target = if rng.coin() {
                random_distribution(rng, classes)
            } else {
                AnnotationDistribution::one_hot(classes, rng.below(classes))
            };
            let annotator = (!annotators.is_empty()).then(|| annotators[rng.below(annotators.len())].clone());
            model.example(features, target, annotator.as_deref()).unwrap()
        })
        .collect();
    let l2 = [0.0, 1e-3, 0.1][rng.below(3)];
    (model, batch, l2)
}

/// Weights first, then biases.
fn param(model: &mut SoftmaxClassifier, i: usize) -> &mut f64 {
    let p = model.parameters_mut();
    let n_weights = p.weights.len();
    if i < n_weights {
        &mut p.weights[i]
    } else {
        &mut p.bias[i - n_weights]
    }
}

fn gradient_check() -> Check {
    let h = 1e-5;
    let mut rng = SeededRng::new(42);
    let mut worst = 0.0f64;
    let mut conditioned = 0;
    for instance in 0..100 {
        let (mut model, batch, l2) = random_model(&mut rng);
        conditioned += usize::from(model.is_conditioned());
        let (_, grad) = model.loss_and_gradient(&batch, l2);
        let analytic: Vec<f64> = grad.weights.iter().chain(&grad.bias).copied().collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let x = *param(&mut model, i);
            *param(&mut model, i) = x + h;
            let up = model.loss_and_gradient(&batch, l2).0;
            *param(&mut model, i) = x - h;
            let down = model.loss_and_gradient(&batch, l2).0;
            *param(&mut model, i) = x;
            numeric.push((up - down) / (2.0 * h));
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        let rel = if scale == 0.0 { diff } else { diff / scale };
        worst = worst.max(rel);
        ensure(rel < 1e-5, format!("instance {instance}: relative error {rel:e}"))?;
    }
    ensure(conditioned > 0, "no conditioned instances were drawn")?;
    Ok(format!("100 instances ({conditioned} conditioned), worst relative error {worst:.2e}"))
}

fn soft_target_minimizer() -> Check {
    let mut rng = SeededRng::new(7);
    let classes = 4;
    let schema = schema_of(classes);
    let space = FeatureSpace::new(16, None, true).unwrap();
    let mut model = SoftmaxClassifier::bias_only(schema, space, TargetKind::SoftDistribution);
    let targets: Vec<_> = (0..200).map(|_| random_distribution(&mut rng, classes)).collect();
    let mut mean = vec![0.0; classes];
    for t in &targets {
        for (m, p) in mean.iter_mut().zip(t.probs()) {
            *m += p / targets.len() as f64;
        }
    }
    let examples: Vec<_> = targets
        .into_iter()
        .map(|t| model.example(FeatureVector::zero(), t, None).unwrap())
        .collect();
    let config = TrainConfig {
        learning_rate: 1.0,
        epochs: 300,
        batch_size: 200,
        l2: 0.0,
        seed: 1,
    };
    model.fit(&examples, &config).map_err(|e| e.to_string())?;
    let q = model.predict_distribution(&FeatureVector::zero(), None).map_err(|e| e.to_string())?;
    let l1: f64 = q.probs().iter().zip(&mean).map(|(a, b)| (a - b).abs()).sum();
    ensure(l1 < 1e-3, format!("L1 distance {l1:e}"))?;
    Ok(format!("L1 distance to mean target {l1:.2e}"))
}

fn disagreement_benefit() -> Check {
    let corpus = synth::generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let space = FeatureSpace::default();
    let config = TrainConfig::default();
    let mean_ce = |kind| -> Result<f64, String> {
        let model = crowdlabel::model::train(&corpus, &space, kind, &config).map_err(|e| e.to_string())?;
        let preds = model.predict_split(&corpus, Split::Test, None).map_err(|e| e.to_string())?;
        Ok(evaluate(&preds, &corpus).map_err(|e| e.to_string())?.mean)
    };
    let soft = mean_ce(TargetKind::SoftDistribution)?;
    let hard = mean_ce(TargetKind::HardMajority)?;
    let gap = hard - soft;
    let detail = format!("soft {soft:.4} vs hard {hard:.4} nats, gap {gap:.4}");
    ensure(gap >= 0.05, detail.clone())?;
    Ok(detail)
}

fn brute_force_top(records: &[(String, f64)], n: usize) -> Vec<String> {
    let mut left: Vec<_> = records.to_vec();
    let mut picked = Vec::new();
    for _ in 0..n {
        let mut best = 0;
        for i in 1..left.len() {
            let (id, acc) = &left[i];
            let (bid, bacc) = &left[best];
            if acc > bacc || (acc == bacc && id < bid) {
                best = i;
            }
        }
        picked.push(left.remove(best).0);
    }
    picked
}

fn ensemble_oracle() -> Check {
    let mut rng = SeededRng::new(99);
    for case in 0..1000 {
        let classes = 2 + rng.below(5);
        let schema = schema_of(classes);
        let votes: Vec<usize> = (0..1 + rng.below(30)).map(|_| rng.below(classes)).collect();
        let got = aggregate(&votes, &schema).map_err(|e| e.to_string())?;
        let expected: Vec<f64> = (0..classes)
            .map(|c| votes.iter().filter(|&&v| v == c).count() as f64 / votes.len() as f64)
            .collect();
        ensure(got.probs() == expected.as_slice(), format!("aggregate case {case}"))?;
    }

    let space = FeatureSpace::new(16, None, true).unwrap();
    let shared = Arc::new(SoftmaxClassifier::bias_only(schema_of(3), space, TargetKind::HardMajority));
    for case in 0..1000 {
        let len = 3 + rng.below(8);
        let mut ids: Vec<usize> = (0..40).collect();
        rng.shuffle(&mut ids);
        let plain: Vec<(String, f64)> = ids[..len]
            .iter()
            .map(|i| (format!("s{i:02}"), [0.5, 0.6, 0.7, 0.75][rng.below(4)]))
            .collect();
        let records: Vec<SubModelRecord> = plain
            .iter()
            .map(|(id, acc)| SubModelRecord {
                stream_id: id.clone(),
                model: SubModel::Standalone(Arc::clone(&shared)),
                validation_accuracy: *acc,
            })
            .collect();
        let n = 3 + rng.below(len - 2);
        let ensemble = select_top_n(&records, n).map_err(|e| e.to_string())?;
        let got: Vec<String> = ensemble.selected().iter().map(|r| r.stream_id.clone()).collect();
        ensure(got == brute_force_top(&plain, n), format!("select_top_n case {case}"))?;
    }

    let corpus = synth::generate(&SynthConfig { samples: 300, seed: 5, ..SynthConfig::default() })
        .map_err(|e| e.to_string())?;
    let config = TrainConfig { epochs: 5, ..TrainConfig::default() };
    let records = train_ensemble(&corpus, &space, &config, StreamMode::Slots, AccuracyReference::OwnLabels)
        .map_err(|e| e.to_string())?;
    ensure(records.len() == 5, format!("{} streams", records.len()))?;
    let rows = sweep_top_n(&records, &corpus, 3..=5).map_err(|e| e.to_string())?;
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ensure(ns == [3, 4, 5], format!("sweep rows {ns:?}"))?;
    Ok("1000 vote sets, 1000 record lists, sweep rows n = 3, 4, 5".into())
}

fn prompt_round_trip() -> Check {
    let mut labels = 0;
    for (task, schema) in [
        ("hate_speech", LabelSchema::hate_speech()),
        ("abusive_conversation", LabelSchema::abusive_conversation()),
    ] {
        let template = PromptTemplate::builtin(task).ok_or("missing template")?;
        template.check_schema(&schema).map_err(|e| e.to_string())?;
        for label in 0..schema.len() {
            let sample = AnnotatedSample::new("x", "some {text} here", vec![Annotation::new("a", label)], Split::Train)
                .map_err(|e| e.to_string())?;
            let record = build_record(&sample, &sample.annotations[0], &template, &schema).map_err(|e| e.to_string())?;
            let back = parse_response(&record.completion, &schema).map_err(|e| e.to_string())?;
            ensure(back == label, format!("{task}: label {label} came back as {back}"))?;
            labels += 1;
        }
    }

    let samples = (0..2)
        .map(|i| {
            AnnotatedSample::new(
                format!("q{i}"),
                format!("message {i}"),
                (0..5).map(|k| Annotation::new(format!("slot_{k}"), (i + k) % 3)).collect(),
                Split::Train,
            )
            .unwrap()
        })
        .collect();
    let corpus = Corpus::new(LabelSchema::hate_speech(), samples).map_err(|e| e.to_string())?;
    let template = PromptTemplate::builtin("hate_speech").unwrap();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("prompts{run}.jsonl"));
        let written = export_dataset(&corpus, &template, None, &path).map_err(|e| e.to_string())?;
        ensure(written == 10, format!("{written} records"))?;
        outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    let lines = outputs[0].split(|&b| b == b'\n').filter(|l| !l.is_empty()).count();
    ensure(lines == 10, format!("{lines} lines"))?;
    ensure(outputs[0] == outputs[1], "exports differ between runs")?;
    Ok(format!("{labels} labels round-tripped, 10 identical lines"))
}

fn pipeline_determinism() -> Check {
    let source = synth::generate(&SynthConfig { samples: 600, seed: 3, ..SynthConfig::default() })
        .map_err(|e| e.to_string())?;
    let space = FeatureSpace::new(1 << 14, Some(NgramRange { min: 3, max: 5 }), true).unwrap();
    let config = TrainConfig { seed: 17, ..TrainConfig::default() };
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let csv_path = root.path().join("corpus.csv");
    synth::save_slots_csv(&source, &csv_path).map_err(|e| e.to_string())?;

    let run = |name: &str| -> Result<Vec<Vec<u8>>, String> {
        let dir = root.path().join(name);
        std::fs::create_dir(&dir).map_err(|e| e.to_string())?;
        let schema = LabelSchema::hate_speech();
        let corpus = ingest(&csv_path, CorpusShape::Slots, &schema, None).map_err(|e| e.to_string())?;
        let corpus_path = dir.join("corpus.jsonl");
        save_corpus(&corpus, &corpus_path).map_err(|e| e.to_string())?;
        let corpus = load_corpus(&corpus_path, &schema).map_err(|e| e.to_string())?;
        let model = crowdlabel::model::train(&corpus, &space, TargetKind::SoftDistribution, &config)
            .map_err(|e| e.to_string())?;
        let model_path = dir.join("model.json");
        model.save(&model_path).map_err(|e| e.to_string())?;
        let model = SoftmaxClassifier::load(&model_path).map_err(|e| e.to_string())?;
        let preds = model.predict_split(&corpus, Split::Test, None).map_err(|e| e.to_string())?;
        let report = evaluate(&preds, &corpus).map_err(|e| e.to_string())?;
        let report_path = dir.join("report.json");
        std::fs::write(&report_path, serde_json::to_vec_pretty(&report).unwrap()).map_err(|e| e.to_string())?;
        [corpus_path, model_path, report_path]
            .iter()
            .map(|p| std::fs::read(p).map_err(|e| e.to_string()))
            .collect()
    };
    let first = run("a")?;
    let second = run("b")?;
    for (name, (x, y)) in ["corpus", "model", "report"].iter().zip(first.iter().zip(&second)) {
        ensure(x == y, format!("{name} files differ"))?;
    }
    Ok(format!("corpus, model ({} bytes) and report identical", first[1].len()))
}

/// Name, optional time budget, check.
type Criterion = (&'static str, Option<Duration>, fn() -> Check);

fn main() {
    let criteria: [Criterion; 8] = [
        ("preference_survey_counts", Some(Duration::from_secs(1)), preference_survey_counts),
        ("exact_binomial_correctness", None, binomial_oracle),
        ("gradient_check", Some(Duration::from_secs(10)), gradient_check),
        ("soft_target_minimizer", None, soft_target_minimizer),
        ("disagreement_benefit", Some(Duration::from_secs(120)), disagreement_benefit),
        ("ensemble_oracle", None, ensemble_oracle),
        ("prompt_round_trip", None, prompt_round_trip),
        ("pipeline_determinism", None, pipeline_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|panic| Err(format!("panicked: {panic:?}")));
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (other, _) => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name:<28} {elapsed:>9.2?}  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name:<28} {elapsed:>9.2?}  {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
