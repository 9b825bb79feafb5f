//! `crowdlabel` command line: ingest, train, ensemble, prompts, eval,
//! survey and synth.

pub mod config;
pub mod server;

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use crowdlabel::ensemble::{
    load_ensemble, save_ensemble, select_top_n, sweep_csv, sweep_top_n, train_ensemble,
    virtual_records, AccuracyReference, EnsembleModel, StreamMode, MIN_SELECTION,
};
use crowdlabel::ingest::{ingest, load_corpus, save_corpus};
use crowdlabel::model::train;
use crowdlabel::prompt::{export_dataset, parse_response, PromptTemplate};
use crowdlabel::stats::{evaluate, preference_test, EvalReport, PreferenceCounts, TestResult, UNIFORM_NULL};
use crowdlabel::survey::{build_bundle, tally, DistributionPredictor, ResponseLog, SurveyBundle};
use crowdlabel::synth::{self, SynthConfig};
use crowdlabel::{Corpus, CorpusShape, LabelSchema, SoftmaxClassifier, Split, TargetKind};

use config::{parse_range, usage, FeatureArgs, Resolved, SchemaArgs, Settings, TrainArgs, UsageError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Train and evaluate text classifiers on the full distribution of annotator
/// labels, build instruction-tuning prompts, and run the preference survey.
///
/// Exit status: 0 on success, 1 on usage errors, 2 on data errors.
#[derive(Debug, Parser)]
#[command(name = "crowdlabel", version)]
pub struct Cli {
    /// Seed for every random choice (shuffles, draws, side flips)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration; flags take precedence over its keys
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an annotation CSV into the canonical JSONL corpus
    Ingest(IngestArgs),
    /// Train one softmax classifier
    Train(TrainCmd),
    /// Per-annotator ensembles
    #[command(subcommand)]
    Ensemble(EnsembleCmd),
    /// Instruction-tuning prompt datasets
    #[command(subcommand)]
    Prompts(PromptsCmd),
    /// Mean test cross entropy against annotation distributions
    Eval(EvalArgs),
    /// Blinded preference survey
    #[command(subcommand)]
    Survey(SurveyCmd),
    /// Write a seeded synthetic corpus
    Synth(SynthArgs),
}

#[derive(Debug, clap::Args)]
pub struct IngestArgs {
    /// CSV with id, text, optional split and label columns
    #[arg(long)]
    pub input: PathBuf,
    /// slots: anonymous label_1..label_k columns; identified: one column per annotator
    #[arg(long)]
    pub shape: CorpusShape,
    /// Split for rows without a split column
    #[arg(long)]
    pub default_split: Option<Split>,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Debug, clap::Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// hard (majority label), soft (annotation distribution) or conditioned
    #[arg(long)]
    pub target: TargetKind,
    /// Model file to write
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Subcommand)]
pub enum EnsembleCmd {
    /// Train one sub-model per annotator (or slot) and write a manifest
    Train(EnsembleTrainArgs),
    /// Wrap each annotator of a conditioned model as a sub-model
    FromConditioned(FromConditionedArgs),
    /// Test cross entropy for each top-n selection, as CSV
    Sweep(SweepArgs),
}

#[derive(Debug, clap::Args)]
pub struct EnsembleTrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// identified or slots
    #[arg(long)]
    pub mode: Option<StreamMode>,
    /// Number of sub-models to select (at least 3)
    #[arg(long)]
    pub n: Option<usize>,
    /// Score sub-models against their own labels or the majority label
    #[arg(long, value_parser = parse_reference)]
    pub accuracy_reference: Option<AccuracyReference>,
    /// Directory for the manifest and sub-model files
    #[arg(long)]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, clap::Args)]
pub struct FromConditionedArgs {
    /// Conditioned model file
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_parser = parse_reference)]
    pub accuracy_reference: Option<AccuracyReference>,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    /// ensemble.json written by `ensemble train` or `ensemble from-conditioned`
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Range of n such as 3..5 (default: 3 up to the number of sub-models)
    #[arg(long)]
    pub n: Option<String>,
    /// CSV file to write (default: standard output)
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

fn parse_reference(s: &str) -> Result<AccuracyReference, String> {
    match s {
        "own" | "own_labels" => Ok(AccuracyReference::OwnLabels),
        "majority" => Ok(AccuracyReference::Majority),
        _ => Err(format!("expected own or majority, got `{s}`")),
    }
}

#[derive(Debug, Subcommand)]
pub enum PromptsCmd {
    /// Write prompt/completion JSONL, one line per (sample, annotation)
    Export(PromptExportArgs),
    /// Map returned completions back to labels
    Score(PromptScoreArgs),
}

#[derive(Debug, clap::Args)]
pub struct PromptExportArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Template file with [scenario] [instruction] [input] [response] sections
    /// (default: the shipped template for the task)
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Only this annotator's annotations
    #[arg(long)]
    pub annotator: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Debug, clap::Args)]
pub struct PromptScoreArgs {
    /// JSONL with sample_id, annotator_id and completion fields
    #[arg(long)]
    pub input: PathBuf,
    /// JSONL to write, adding `label` (null when unparseable)
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Single model file
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub model: Option<PathBuf>,
    /// Annotator to condition on, for conditioned models
    #[arg(long, requires = "model")]
    pub annotator: Option<String>,
    /// Ensemble manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Top-n for the ensemble (default: the manifest's)
    #[arg(long, requires = "manifest")]
    pub n: Option<usize>,
    /// Report JSON to write
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Debug, Subcommand)]
pub enum SurveyCmd {
    /// Draw test samples and pair baseline and multi-label predictions
    Build(SurveyBuildArgs),
    /// Serve a bundle over HTTP and log responses
    Serve(SurveyServeArgs),
    /// Tally responses (or read counts) and run the preference test
    Analyze(SurveyAnalyzeArgs),
}

#[derive(Debug, clap::Args)]
pub struct SurveyBuildArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Model trained on majority labels
    #[arg(long)]
    pub baseline: PathBuf,
    /// Model trained on annotation distributions
    #[arg(long, required_unless_present = "multi_label_manifest", conflicts_with = "multi_label_manifest")]
    pub multi_label: Option<PathBuf>,
    /// Ensemble manifest to use as the multi-label side instead
    #[arg(long)]
    pub multi_label_manifest: Option<PathBuf>,
    /// Number of items
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Debug, clap::Args)]
pub struct SurveyServeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Append-only response log (JSONL); created if missing
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Directory with the survey front end
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SurveyAnalyzeArgs {
    /// JSON counts: {"baseline": .., "multi_label": .., "no_difference": ..}
    #[arg(long, conflicts_with_all = ["bundle", "log"])]
    pub counts_file: Option<PathBuf>,
    #[arg(long, requires = "log")]
    pub bundle: Option<PathBuf>,
    #[arg(long, requires = "bundle")]
    pub log: Option<PathBuf>,
    /// Null probability of each category
    #[arg(long, default_value_t = UNIFORM_NULL)]
    pub null_prob: f64,
    /// Report JSON to write
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = SynthConfig::default().samples)]
    pub samples: usize,
    /// Slots CSV to write (label_1..label_5)
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the corpus as JSONL with annotator ids
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    if e.is::<UsageError>() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<crowdlabel::Error>() {
        Some(
            crowdlabel::Error::InvalidConfig(_)
            | crowdlabel::Error::InvalidFeatureSpace(_)
            | crowdlabel::Error::InvalidSelection(_),
        ) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let settings = Settings::new(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&settings, a),
        Command::Train(a) => cmd_train(&settings, a),
        Command::Ensemble(EnsembleCmd::Train(a)) => cmd_ensemble_train(&settings, a),
        Command::Ensemble(EnsembleCmd::FromConditioned(a)) => cmd_from_conditioned(&settings, a),
        Command::Ensemble(EnsembleCmd::Sweep(a)) => cmd_sweep(&settings, a),
        Command::Prompts(PromptsCmd::Export(a)) => cmd_prompts_export(&settings, a),
        Command::Prompts(PromptsCmd::Score(a)) => cmd_prompts_score(&settings, a),
        Command::Eval(a) => cmd_eval(&settings, a),
        Command::Survey(SurveyCmd::Build(a)) => cmd_survey_build(&settings, a),
        Command::Survey(SurveyCmd::Serve(a)) => cmd_survey_serve(a),
        Command::Survey(SurveyCmd::Analyze(a)) => cmd_survey_analyze(&settings, a),
        Command::Synth(a) => cmd_synth(&settings, a),
    }
}

fn read_corpus(settings: &Settings, flag: Option<&PathBuf>, schema: &LabelSchema) -> anyhow::Result<Corpus> {
    let path = settings.corpus_path(flag)?;
    load_corpus(&path, schema).with_context(|| format!("corpus {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<SoftmaxClassifier> {
    SoftmaxClassifier::load(path).with_context(|| format!("model {}", path.display()))
}

fn cmd_ingest(settings: &Settings, a: IngestArgs) -> anyhow::Result<()> {
    let schema = settings.schema(&a.schema)?;
    let corpus = ingest(&a.input, a.shape, &schema, a.default_split)
        .with_context(|| format!("ingesting {}", a.input.display()))?;
    save_corpus(&corpus, &a.output)?;
    println!(
        "{} samples ({} train, {} validation, {} test), {} annotators -> {}",
        corpus.len(),
        corpus.split_len(Split::Train),
        corpus.split_len(Split::Validation),
        corpus.split_len(Split::Test),
        corpus.annotators().len(),
        a.output.display()
    );
    Ok(())
}

fn cmd_train(settings: &Settings, a: TrainCmd) -> anyhow::Result<()> {
    let schema = settings.schema(&a.schema)?;
    let space = settings.space(&a.features)?;
    let config = settings.train(&a.train)?;
    let corpus = read_corpus(settings, a.corpus.as_ref(), &schema)?;
    let model = train(&corpus, &space, a.target, &config)?;
    model.save(&a.output)?;
    println!("{:?} model -> {}", a.target, a.output.display());
    Ok(())
}

fn check_n(n: usize, available: usize) -> anyhow::Result<()> {
    if n < MIN_SELECTION || n > available {
        return Err(usage(format!(
            "--n {n} outside {MIN_SELECTION}..={available} ({available} sub-models)"
        )));
    }
    Ok(())
}

fn print_ranking(ensemble: &EnsembleModel) {
    for (rank, r) in ensemble.ranked().iter().enumerate() {
        let mark = if rank < ensemble.n() { "*" } else { " " };
        println!("{mark} {:<24} {:.4}", r.stream_id, r.validation_accuracy);
    }
}

fn cmd_ensemble_train(settings: &Settings, a: EnsembleTrainArgs) -> anyhow::Result<()> {
    let schema = settings.schema(&a.schema)?;
    let space = settings.space(&a.features)?;
    let config = settings.train(&a.train)?;
    let mode = settings.ensemble_mode(a.mode);
    let n = settings.ensemble_n(a.n);
    let reference = settings.accuracy_reference(a.accuracy_reference);
    let corpus = read_corpus(settings, a.corpus.as_ref(), &schema)?;
    let records = train_ensemble(&corpus, &space, &config, mode, reference)?;
    check_n(n, records.len())?;
    let ensemble = select_top_n(&records, n)?;
    let manifest = save_ensemble(&records, n, &a.output_dir)?;
    print_ranking(&ensemble);
    println!("{} sub-models, top {n} selected -> {}", records.len(), manifest.display());
    Ok(())
}

fn cmd_from_conditioned(settings: &Settings, a: FromConditionedArgs) -> anyhow::Result<()> {
    let schema = settings.schema(&a.schema)?;
    let model = Arc::new(load_model(&a.model)?);
    if model.schema() != &schema {
        return Err(usage("model and --task/--schema disagree on the label set"));
    }
    let corpus = read_corpus(settings, a.corpus.as_ref(), &schema)?;
    let n = settings.ensemble_n(a.n);
    let records = virtual_records(model, &corpus, settings.accuracy_reference(a.accuracy_reference))?;
    check_n(n, records.len())?;
    let ensemble = select_top_n(&records, n)?;
    let manifest = save_ensemble(&records, n, &a.output_dir)?;
    print_ranking(&ensemble);
    println!("{} virtual sub-models, top {n} selected -> {}", records.len(), manifest.display());
    Ok(())
}

fn cmd_sweep(settings: &Settings, a: SweepArgs) -> anyhow::Result<()> {
    let schema = settings.schema(&a.schema)?;
    let corpus = read_corpus(settings, a.corpus.as_ref(), &schema)?;
    let (records, _) = load_ensemble(&a.manifest).with_context(|| format!("manifest {}", a.manifest.display()))?;
    let (lo, hi) = match &a.n {
        Some(s) => parse_range(s).map_err(usage)?,
        None => (MIN_SELECTION, records.len()),
    };
    check_n(lo, records.len())?;
    check_n(hi, records.len())?;
    let rows = sweep_top_n(&records, &corpus, lo..=hi)?;
    let csv = sweep_csv(&rows);
    match &a.output {
        Some(path) => fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn cmd_prompts_export(settings: &Settings, a: PromptExportArgs) -> anyhow::Result<()> {
    let schema = settings.schema(&a.schema)?;
    let template = match &a.template {
        Some(path) => PromptTemplate::load(path).with_context(|| format!("template {}", path.display()))?,
        None => PromptTemplate::builtin(schema.task_id())
            .ok_or_else(|| usage(format!("no shipped template for `{}`; pass --template", schema.task_id())))?,
    };
    template.check_schema(&schema)?;
    let corpus = read_corpus(settings, a.corpus.as_ref(), &schema)?;
    let written = export_dataset(&corpus, &template, a.annotator.as_deref(), &a.output)?;
    println!("{written} records -> {}", a.output.display());
    Ok(())
}

#[derive(serde::Deserialize)]
struct Completion {
    sample_id: String,
    annotator_id: String,
    completion: String,
}

#[derive(Serialize)]
struct ScoredCompletion<'a> {
    sample_id: &'a str,
    annotator_id: &'a str,
    completion: &'a str,
    label: Option<&'a str>,
}

fn cmd_prompts_score(settings: &Settings, a: PromptScoreArgs) -> anyhow::Result<()> {
    let schema = settings.schema(&a.schema)?;
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let mut out = Vec::new();
    let (mut parsed, mut failed) = (0usize, 0usize);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", a.input.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Completion = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", a.input.display(), i + 1))?;
        let label = match parse_response(&c.completion, &schema) {
            Ok(idx) => {
                parsed += 1;
                schema.name(idx)
            }
            Err(_) => {
                failed += 1;
                None
            }
        };
        serde_json::to_writer(
            &mut out,
            &ScoredCompletion {
                sample_id: &c.sample_id,
                annotator_id: &c.annotator_id,
                completion: &c.completion,
                label,
            },
        )?;
        out.push(b'\n');
    }
    fs::write(&a.output, out).with_context(|| format!("writing {}", a.output.display()))?;
    println!("{parsed} parsed, {failed} unparseable -> {}", a.output.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    config: Resolved,
    source: EvalSource,
    report: EvalReport,
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum EvalSource {
    Model {
        path: PathBuf,
        #[serde(skip_serializing_if = "Option::is_none")]
        annotator: Option<String>,
    },
    Ensemble {
        manifest: PathBuf,
        n: usize,
        selected: Vec<String>,
    },
}

fn cmd_eval(settings: &Settings, a: EvalArgs) -> anyhow::Result<()> {
    let schema = settings.schema(&a.schema)?;
    let corpus = read_corpus(settings, a.corpus.as_ref(), &schema)?;
    let (preds, source, features, train) = if let Some(path) = &a.model {
        let model = load_model(path)?;
        let preds = model.predict_split(&corpus, Split::Test, a.annotator.as_deref())?;
        let source = EvalSource::Model {
            path: path.clone(),
            annotator: a.annotator.clone(),
        };
        (preds, source, Some(*model.space()), model.trained_with().copied())
    } else {
        let manifest = a.manifest.as_ref().expect("clap enforces one source");
        let (records, stored_n) = load_ensemble(manifest).with_context(|| format!("manifest {}", manifest.display()))?;
        let n = a.n.unwrap_or(stored_n);
        check_n(n, records.len())?;
        let ensemble = select_top_n(&records, n)?;
        let preds = ensemble.predict_split(&corpus, Split::Test)?;
        let source = EvalSource::Ensemble {
            manifest: manifest.clone(),
            n,
            selected: ensemble.selected().iter().map(|r| r.stream_id.clone()).collect(),
        };
        (preds, source, Some(*ensemble.space()), None)
    };
    let report = evaluate(&preds, &corpus)?;
    println!(
        "mean cross entropy {:.4} over {} test samples (accuracy vs majority {:.4})",
        report.mean,
        report.per_sample.len(),
        report.accuracy_vs_majority
    );
    write_json(
        &a.output,
        &EvalOutput {
            config: settings.resolved(&schema, features, train),
            source,
            report,
        },
    )
}

fn cmd_survey_build(settings: &Settings, a: SurveyBuildArgs) -> anyhow::Result<()> {
    let schema = settings.schema(&a.schema)?;
    let corpus = read_corpus(settings, a.corpus.as_ref(), &schema)?;
    let baseline = load_model(&a.baseline)?;
    let multi: Box<dyn DistributionPredictor> = match (&a.multi_label, &a.multi_label_manifest) {
        (Some(path), _) => Box::new(load_model(path)?),
        (None, Some(manifest)) => {
            let (records, n) = load_ensemble(manifest).with_context(|| format!("manifest {}", manifest.display()))?;
            Box::new(select_top_n(&records, n)?)
        }
        (None, None) => unreachable!("clap enforces one multi-label source"),
    };
    let k = settings.survey_k(a.k);
    let bundle = build_bundle(&corpus, &baseline, multi.as_ref(), k, settings.seed)?;
    bundle.save(&a.output)?;
    println!("{} items -> {}", bundle.items.len(), a.output.display());
    Ok(())
}

fn cmd_survey_serve(a: SurveyServeArgs) -> anyhow::Result<()> {
    let bundle = SurveyBundle::load(&a.bundle).with_context(|| format!("bundle {}", a.bundle.display()))?;
    let log = ResponseLog::open(&a.log).with_context(|| format!("response log {}", a.log.display()))?;
    let token = std::env::var(server::ADMIN_TOKEN_VAR).ok();
    if token.is_none() {
        log::warn!("{} is not set; /api/results is disabled", server::ADMIN_TOKEN_VAR);
    }
    let state = Arc::new(server::AppState::new(bundle, log, token));
    let app = server::router(state, a.static_dir);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .map_err(|e| usage(format!("cannot bind {}: {e}", a.addr)))?;
        println!("serving survey on http://{}", listener.local_addr()?);
        server::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

#[derive(Serialize)]
struct AnalyzeOutput {
    counts: PreferenceCounts,
    result: TestResult,
}

fn cmd_survey_analyze(_settings: &Settings, a: SurveyAnalyzeArgs) -> anyhow::Result<()> {
    let counts = match (&a.counts_file, &a.bundle, &a.log) {
        (Some(path), _, _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<PreferenceCounts>(&text).with_context(|| format!("counts {}", path.display()))?
        }
        (None, Some(bundle), Some(log)) => {
            let bundle = SurveyBundle::load(bundle)?;
            let log = ResponseLog::open(log)?;
            tally(log.entries(), &bundle)?
        }
        _ => return Err(usage("pass --counts-file, or --bundle with --log")),
    };
    if !(a.null_prob > 0.0 && a.null_prob < 1.0) {
        return Err(usage(format!("--null-prob {} is outside (0, 1)", a.null_prob)));
    }
    let result = preference_test(&counts, a.null_prob)?;
    print!("{}", result.render_table());
    if let Some(path) = &a.output {
        write_json(path, &AnalyzeOutput { counts, result })?;
    }
    Ok(())
}

fn cmd_synth(settings: &Settings, a: SynthArgs) -> anyhow::Result<()> {
    let corpus = synth::generate(&SynthConfig {
        samples: a.samples,
        seed: settings.seed,
        ..SynthConfig::default()
    })
    .map_err(|e| usage(e.to_string()))?;
    synth::save_slots_csv(&corpus, &a.output)?;
    if let Some(path) = &a.jsonl {
        save_corpus(&corpus, path)?;
    }
    println!("{} samples -> {}", corpus.len(), a.output.display());
    Ok(())
}
