use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn crowdlabel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdlabel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = crowdlabel(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const FAST: [&str; 4] = ["--dimension", "4096", "--epochs", "8"];

/// synth -> ingest -> train soft -> eval, run inside `dir` with relative
/// paths. Returns the bytes of the corpus, model and report.
fn soft_pipeline(dir: &Path, seed: &str) -> Vec<Vec<u8>> {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_crowdlabel"))
            .current_dir(dir)
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["synth", "--seed", seed, "--samples", "600", "--output", "corpus.csv"]);
    run(&["ingest", "--input", "corpus.csv", "--shape", "slots", "--output", "corpus.jsonl"]);
    let mut train = vec!["train", "--seed", seed, "--corpus", "corpus.jsonl", "--target", "soft", "--output", "soft.json"];
    train.extend(FAST);
    run(&train);
    run(&["eval", "--corpus", "corpus.jsonl", "--model", "soft.json", "--output", "report.json"]);
    ["corpus.jsonl", "soft.json", "report.json"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

fn assert_same(a: &[Vec<u8>], b: &[Vec<u8>]) {
    for (name, (x, y)) in ["corpus", "model", "report"].iter().zip(a.iter().zip(b)) {
        assert!(x == y, "{name} files differ");
    }
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = soft_pipeline(a.path(), "21");
    let second = soft_pipeline(b.path(), "21");
    assert_same(&first, &second);

    let report: serde_json::Value = serde_json::from_slice(&first[2]).unwrap();
    assert_eq!(report["config"]["train"]["seed"], 21);
    assert_eq!(report["config"]["train"]["epochs"], 8);
    assert_eq!(report["config"]["features"]["dimension"], 4096);
    assert_eq!(report["report"]["per_sample"].as_array().unwrap().len(), 90);

    // rerunning in place overwrites with the same bytes
    let again = soft_pipeline(a.path(), "21");
    assert_same(&first, &again);
}

#[test]
fn ensemble_sweep_prompts_and_survey() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let csv = d.join("corpus.csv");
    let corpus = d.join("corpus.jsonl");
    ok(&["synth", "--samples", "400", "--output", p(&csv)]);
    ok(&["ingest", "--input", p(&csv), "--shape", "slots", "--output", p(&corpus)]);

    let ens = d.join("ens");
    let mut args = vec!["ensemble", "train", "--corpus", p(&corpus), "--mode", "slots", "--n", "3", "--output-dir", p(&ens)];
    args.extend(FAST);
    let out = ok(&args);
    assert!(out.contains("5 sub-models, top 3 selected"), "{out}");
    let manifest = ens.join("ensemble.json");

    let sweep = d.join("sweep.csv");
    ok(&["ensemble", "sweep", "--manifest", p(&manifest), "--corpus", p(&corpus), "--n", "3..5", "--output", p(&sweep)]);
    let text = std::fs::read_to_string(&sweep).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "n,mean_cross_entropy");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("3,") && lines[3].starts_with("5,"));

    let report = d.join("ens_report.json");
    ok(&["eval", "--corpus", p(&corpus), "--manifest", p(&manifest), "--n", "4", "--output", p(&report)]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["source"]["ensemble"]["n"], 4);

    let cond = d.join("cond.json");
    let mut args = vec!["train", "--corpus", p(&corpus), "--target", "conditioned", "--output", p(&cond)];
    args.extend(FAST);
    ok(&args);
    let virt = d.join("virtual");
    ok(&["ensemble", "from-conditioned", "--model", p(&cond), "--corpus", p(&corpus), "--output-dir", p(&virt)]);
    let virt_report = d.join("virt_report.json");
    ok(&["eval", "--corpus", p(&corpus), "--manifest", p(&virt.join("ensemble.json")), "--output", p(&virt_report)]);

    let prompts = d.join("prompts.jsonl");
    let out = ok(&["prompts", "export", "--corpus", p(&corpus), "--annotator", "slot_2", "--output", p(&prompts)]);
    assert!(out.starts_with("400 records"), "{out}");
    let first_line = std::fs::read_to_string(&prompts).unwrap().lines().next().unwrap().to_string();
    assert!(first_line.starts_with("{\"prompt\":"));

    let completions = d.join("completions.jsonl");
    std::fs::write(
        &completions,
        "{\"sample_id\":\"s1\",\"annotator_id\":\"slot_0\",\"completion\":\" hate.\"}\n\
         {\"sample_id\":\"s2\",\"annotator_id\":\"slot_0\",\"completion\":\"no idea\"}\n",
    )
    .unwrap();
    let scored = d.join("scored.jsonl");
    let out = ok(&["prompts", "score", "--input", p(&completions), "--output", p(&scored)]);
    assert!(out.starts_with("1 parsed, 1 unparseable"), "{out}");
    assert!(std::fs::read_to_string(&scored).unwrap().contains("\"label\":\"Hate\""));

    let hard = d.join("hard.json");
    let soft = d.join("soft.json");
    for (target, path) in [("hard", &hard), ("soft", &soft)] {
        let mut args = vec!["train", "--corpus", p(&corpus), "--target", target, "--output", p(path)];
        args.extend(FAST);
        ok(&args);
    }
    let bundle = d.join("bundle.json");
    ok(&["survey", "build", "--seed", "3", "--corpus", p(&corpus), "--baseline", p(&hard), "--multi-label", p(&soft), "--output", p(&bundle)]);
    let b: serde_json::Value = serde_json::from_slice(&std::fs::read(&bundle).unwrap()).unwrap();
    assert_eq!(b["items"].as_array().unwrap().len(), 10);
    let bundle2 = d.join("bundle2.json");
    ok(&["survey", "build", "--seed", "3", "--corpus", p(&corpus), "--baseline", p(&hard), "--multi-label-manifest", p(&manifest), "--k", "5", "--output", p(&bundle2)]);
}

#[test]
fn survey_analyze_reproduces_published_counts() {
    let out = ok(&["survey", "analyze", "--counts-file", p(&fixture("preference_counts_hate_speech.json"))]);
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows[1], ["Baseline", "118", "0.3278", "0.6078"]);
    assert_eq!(rows[2], ["Multi-label", "model", "198", "0.5500", "0.0000"]);
    assert_eq!(rows[3], ["No", "difference", "44", "0.1222", "1.0000"]);

    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("analysis.json");
    let out = ok(&[
        "survey",
        "analyze",
        "--counts-file",
        p(&fixture("preference_counts_abusive_conversation.json")),
        "--output",
        p(&report),
    ]);
    assert!(out.contains("152       0.4222     0.0003"), "{out}");
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["result"]["total"], 360);
}

#[test]
fn identified_csv_ingests() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("c.jsonl");
    let out = ok(&[
        "ingest",
        "--input",
        p(&fixture("annotations_identified.csv")),
        "--shape",
        "identified",
        "--output",
        p(&out_path),
    ]);
    assert!(out.starts_with("4 samples (2 train, 1 validation, 1 test), 4 annotators"), "{out}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // usage: unknown flag, unknown config key, bad hyperparameter, bad n
    assert_eq!(crowdlabel(&["train", "--frobnicate"]).status.code(), Some(1));
    let config = d.join("config.json");
    std::fs::write(&config, r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = crowdlabel(&["--config", p(&config), "synth", "--output", p(&d.join("x.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    assert_eq!(
        crowdlabel(&["train", "--corpus", "missing.jsonl", "--target", "soft", "--output", "m.json", "--epochs", "0"]).status.code(),
        Some(1)
    );

    // data: missing file, unknown label with its row
    let out = crowdlabel(&["train", "--corpus", p(&d.join("missing.jsonl")), "--target", "soft", "--output", p(&d.join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
    let out = crowdlabel(&[
        "ingest",
        "--input",
        p(&fixture("annotations_bad_label.csv")),
        "--shape",
        "slots",
        "--default-split",
        "train",
        "--output",
        p(&d.join("bad.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 3") && stderr.contains("Hateful"), "{stderr}");

    // config values apply when flags are absent
    let csv = d.join("c.csv");
    std::fs::write(&config, r#"{"seed": 5}"#).unwrap();
    ok(&["--config", p(&config), "synth", "--samples", "30", "--output", p(&csv)]);
    let with_flag = d.join("c2.csv");
    ok(&["--seed", "5", "synth", "--samples", "30", "--output", p(&with_flag)]);
    assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&with_flag).unwrap());
}
