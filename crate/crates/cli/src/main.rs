//! `formgraph` command-line driver.
//!
//! Exit codes: 0 success, 1 a check (gradcheck) did not pass, 2 invalid
//! arguments or model files, 3 unreadable or inconsistent documents.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use formgraph::docmodel::{load_funsd, load_naf, synth_corpus, synth_form, Document, SynthParams};
use formgraph::exec::Execution;
use formgraph::features::{ExternalProvider, StubProvider, VisualFeatureProvider};
use formgraph::geometry::{union_bbox, BBox, Point};
use formgraph::gnn::grad::{finite_diff_gradcheck, GradcheckOptions, GradcheckTarget};
use formgraph::gnn::{Model, ModelConfig, ModelWeights};
use formgraph::graphedit::{render_svg, Prediction, RelationshipVerdict};
use formgraph::metrics::{evaluate, match_relationships, Averaging};
use formgraph::pipeline::{alignment_dump, run_document, GcnScorer, OracleScorer, PipelineError, RunOptions, Scorer};
use formgraph::proposal::select_edges;
use formgraph::protocol::{EditThresholds, EDIT_SCHEDULE, RELATIONSHIP_THRESHOLD};
use formgraph::supervision::{pair_accuracy, store_proposal, train_proposal_mlp, training_pairs, TrainConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "formgraph", version, about = "Form understanding by iterative graph editing")]
struct Cli {
    /// Worker threads for corpus-level parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic forms.
    Synth(SynthArgs),
    /// Score and select candidate edges for one document.
    Propose(ProposeArgs),
    /// Run the full pipeline and write prediction JSON (and SVG overlays).
    Infer(InferArgs),
    /// Dump line alignment and training labels of the proposal graph.
    Align(AlignArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Finite-difference gradient check of the proposal scorer.
    Gradcheck(GradcheckArgs),
    /// Write a randomly initialized weight file.
    InitWeights(InitArgs),
    /// Train the proposal scorer on annotated documents.
    TrainProposal(TrainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetKind {
    /// Documents written by `formgraph synth` (native JSON).
    Synth,
    Funsd,
    Naf,
}

#[derive(Args)]
struct DocInput {
    /// Document files.
    #[arg(required = true)]
    docs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "synth")]
    format: DatasetKind,
}

#[derive(Args)]
struct ModelSource {
    /// Weight file in FGW1 format.
    #[arg(long, conflicts_with = "oracle")]
    weights: Option<PathBuf>,
    /// Score with the document's own ground truth instead of a model.
    #[arg(long)]
    oracle: bool,
    #[arg(long, value_enum, default_value = "stub")]
    provider: ProviderKind,
    /// Program for `--provider external`, followed by its arguments.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    provider_cmd: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Stub,
    External,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    rows: usize,
    #[arg(long, default_value_t = 2)]
    cols: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0.3)]
    multiline: f64,
    #[arg(long, default_value_t = 0.2)]
    overseg: f64,
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
    /// Output file, or directory when `--count` exceeds 1. Stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProposeArgs {
    doc: PathBuf,
    #[arg(long, value_enum, default_value = "synth")]
    format: DatasetKind,
    #[command(flatten)]
    model: ModelSource,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    input: DocInput,
    #[command(flatten)]
    model: ModelSource,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Per-stage `merge,group,prune` triples separated by `;`.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long, default_value_t = RELATIONSHIP_THRESHOLD)]
    relationship_threshold: f64,
    /// Also record relationship scores under forced GT grouping.
    #[arg(long)]
    hit_at_1: bool,
    /// Write an SVG overlay next to each prediction.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct AlignArgs {
    doc: PathBuf,
    #[arg(long, value_enum, default_value = "synth")]
    format: DatasetKind,
    #[command(flatten)]
    model: ModelSource,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    pred: Vec<PathBuf>,
    /// Ground-truth documents.
    #[arg(long, required = true, num_args = 1..)]
    gt: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "synth")]
    format: DatasetKind,
    /// Average per document instead of pooling counts.
    #[arg(long)]
    per_document: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckTarget {
    Linear,
    ProposalMlp,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "proposal-mlp")]
    target: CheckTarget,
    #[arg(long, default_value_t = 100)]
    draws: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest relative error that passes.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: DocInput,
    /// Start from these weights; other tensors are copied through unchanged.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 3000)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Check(String),
}

type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    fn usage(self) -> Outcome<T>;
    fn data(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Outcome<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn data(self) -> Outcome<T> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

fn pipeline_failure(doc: &Document, e: PipelineError) -> Failure {
    let err = anyhow!("{}: {e}", doc.name);
    match e {
        PipelineError::Config(_) => Failure::Usage(err),
        _ => Failure::Data(err),
    }
}

fn load_doc(path: &Path, kind: DatasetKind) -> Outcome<Document> {
    let mut doc = match kind {
        DatasetKind::Synth => Document::from_json_file(path),
        DatasetKind::Funsd => load_funsd(path),
        DatasetKind::Naf => load_naf(path),
    }
    .data()?;
    if doc.name.is_empty() {
        doc.name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    }
    Ok(doc)
}

fn load_docs(input: &DocInput) -> Outcome<Vec<Document>> {
    input.docs.iter().map(|p| load_doc(p, input.format)).collect()
}

fn load_weights(path: &Path) -> Outcome<(ModelWeights, ModelConfig)> {
    if !path.is_file() {
        return Err(Failure::Usage(anyhow!("weights file {} does not exist", path.display())));
    }
    let w = ModelWeights::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .usage()?;
    let cfg = ModelConfig::infer(&w)
        .with_context(|| format!("weights {}", path.display()))
        .usage()?;
    Ok((w, cfg))
}

fn provider(src: &ModelSource, dim: usize) -> Outcome<Box<dyn VisualFeatureProvider>> {
    Ok(match src.provider {
        ProviderKind::Stub => Box::new(StubProvider::new(dim)),
        ProviderKind::External => {
            let (program, args) = src
                .provider_cmd
                .split_first()
                .ok_or_else(|| Failure::Usage(anyhow!("--provider external needs --provider-cmd")))?;
            Box::new(ExternalProvider::spawn(program, args, dim).usage()?)
        }
    })
}

/// A model-backed scorer, or `None` when `--oracle` asks for per-document
/// oracle scorers.
fn gcn_scorer(src: &ModelSource) -> Outcome<Option<GcnScorer>> {
    if src.oracle {
        return Ok(None);
    }
    let path = src
        .weights
        .as_ref()
        .ok_or_else(|| Failure::Usage(anyhow!("either --weights or --oracle is required")))?;
    let (w, cfg) = load_weights(path)?;
    let model: Model<f32> = Model::from_weights(&w, &cfg).usage()?;
    let p = provider(src, cfg.visual_dim)?;
    Ok(Some(GcnScorer::new(model, p).usage()?))
}

fn with_scorer<R>(gcn: &Option<GcnScorer>, doc: &Document, f: impl FnOnce(&dyn Scorer) -> R) -> R {
    match gcn {
        Some(s) => f(s),
        None => f(&OracleScorer::new(doc)),
    }
}

fn parse_thresholds(text: &str) -> Outcome<Vec<EditThresholds>> {
    text.split(';')
        .map(|stage| {
            let v: Vec<f64> = stage
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("threshold triple {stage:?}"))
                .usage()?;
            let [merge, group, prune] = v[..] else {
                return Err(Failure::Usage(anyhow!("threshold triple {stage:?} needs 3 values")));
            };
            let t = EditThresholds::new(merge, group, prune);
            if !t.is_valid() {
                return Err(Failure::Usage(anyhow!("thresholds {stage:?} must lie in (0, 1)")));
            }
            Ok(t)
        })
        .collect()
}

fn write_atomic(path: &Path, contents: &str) -> Outcome<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents)
        .and_then(|_| fs::rename(&tmp, path))
        .with_context(|| format!("writing {}", path.display()))
        .data()
}

fn emit(out: Option<&Path>, contents: &str) -> Outcome<()> {
    match out {
        Some(p) => write_atomic(p, contents),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{contents}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Data(e.into())),
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn synth(a: &SynthArgs) -> Outcome<()> {
    let params = SynthParams {
        rows: a.rows,
        cols: a.cols,
        multiline_prob: a.multiline,
        overseg_prob: a.overseg,
        jitter: a.jitter,
    };
    if a.count == 1 {
        let doc = synth_form(a.seed, params).usage()?;
        return emit(a.out.as_deref(), &doc.to_json());
    }
    let docs = synth_corpus(a.seed, a.count, a.rows..=a.rows, a.cols..=a.cols, params).usage()?;
    let dir = a
        .out
        .as_ref()
        .ok_or_else(|| Failure::Usage(anyhow!("--out DIR is required with --count > 1")))?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).data()?;
    for d in &docs {
        write_atomic(&dir.join(format!("{}.json", d.name)), &d.to_json())?;
    }
    Ok(())
}

fn propose(a: &ProposeArgs) -> Outcome<()> {
    let gcn = gcn_scorer(&a.model)?;
    let doc = load_doc(&a.doc, a.format)?;
    let lines = doc.confident_lines();
    let candidates = with_scorer(&gcn, &doc, |s| s.propose(&doc, &lines, Execution::Parallel))
        .map_err(|e| pipeline_failure(&doc, e))?;
    let selected = select_edges(&candidates);
    let report = json!({
        "document": doc.name,
        "lines": lines.len(),
        "candidates": candidates,
        "selected": selected,
    });
    emit(a.out.as_deref(), &to_json(&report))
}

fn entity_center(doc: &Document, e: usize) -> Option<Point> {
    let boxes: Vec<BBox> = doc.gt_entities[e]
        .line_ids
        .iter()
        .filter_map(|&l| doc.gt_line(l))
        .map(|l| l.bbox)
        .collect();
    union_bbox(&boxes).ok().map(|b| b.center())
}

fn overlay(pred: &Prediction, doc: &Document) -> String {
    if doc.gt_entities.is_empty() {
        return render_svg(pred, doc.image_width, doc.image_height, None, &[]);
    }
    let m = match_relationships(pred, doc);
    let verdicts: Vec<RelationshipVerdict> = m
        .correct
        .iter()
        .map(|&c| if c { RelationshipVerdict::Correct } else { RelationshipVerdict::Incorrect })
        .collect();
    let missed: Vec<(Point, Point)> = doc
        .gt_relationships
        .iter()
        .zip(&m.found)
        .filter(|(_, &f)| !f)
        .filter_map(|(&[a, b], _)| Some((entity_center(doc, a)?, entity_center(doc, b)?)))
        .collect();
    render_svg(pred, doc.image_width, doc.image_height, Some(&verdicts), &missed)
}

fn file_stem_for(doc: &Document) -> String {
    doc.name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn infer(a: &InferArgs) -> Outcome<()> {
    let thresholds = match &a.thresholds {
        Some(s) => parse_thresholds(s)?,
        None => EDIT_SCHEDULE.to_vec(),
    };
    if !(a.relationship_threshold > 0.0 && a.relationship_threshold < 1.0) {
        return Err(Failure::Usage(anyhow!("--relationship-threshold must lie in (0, 1)")));
    }
    let opts = RunOptions {
        thresholds,
        relationship_threshold: a.relationship_threshold,
        gt_entity_scores: a.hit_at_1,
    };
    let gcn = gcn_scorer(&a.model)?;
    let docs = load_docs(&a.input)?;
    let mut stems: Vec<String> = docs.iter().map(file_stem_for).collect();
    stems.sort();
    if stems.windows(2).any(|w| w[0] == w[1]) {
        return Err(Failure::Data(anyhow!("two input documents share a name")));
    }
    let inner = if docs.len() > 1 { Execution::Sequential } else { Execution::Parallel };
    let outputs = Execution::Parallel.map(&docs, |doc| {
        with_scorer(&gcn, doc, |s| run_document(doc, s, &opts, inner)).map(|o| o.prediction)
    });
    // everything is computed before anything is written
    let mut preds = Vec::with_capacity(docs.len());
    for (doc, out) in docs.iter().zip(outputs) {
        preds.push(out.map_err(|e| pipeline_failure(doc, e))?);
    }
    fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .data()?;
    for (doc, pred) in docs.iter().zip(&preds) {
        let stem = file_stem_for(doc);
        write_atomic(&a.out.join(format!("{stem}.json")), &pred.to_json())?;
        if a.svg {
            write_atomic(&a.out.join(format!("{stem}.svg")), &overlay(pred, doc))?;
        }
        log::info!("{}: {} entities, {} relationships", doc.name, pred.entities.len(), pred.relationships.len());
    }
    Ok(())
}

fn align(a: &AlignArgs) -> Outcome<()> {
    let gcn = gcn_scorer(&a.model)?;
    let doc = load_doc(&a.doc, a.format)?;
    let dump = with_scorer(&gcn, &doc, |s| alignment_dump(&doc, s, Execution::Parallel))
        .map_err(|e| pipeline_failure(&doc, e))?;
    emit(None, &to_json(&dump))
}

fn prediction_files(paths: &[PathBuf]) -> Outcome<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))
                .data()?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn eval(a: &EvalArgs) -> Outcome<()> {
    let mut preds = std::collections::BTreeMap::new();
    for f in prediction_files(&a.pred)? {
        let text = fs::read_to_string(&f).with_context(|| format!("reading {}", f.display())).data()?;
        let p: Prediction = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", f.display()))
            .data()?;
        if preds.insert(p.document.clone(), p).is_some() {
            return Err(Failure::Data(anyhow!("{}: duplicate prediction for one document", f.display())));
        }
    }
    let mut pairs = Vec::new();
    for g in &a.gt {
        let doc = load_doc(g, a.format)?;
        let p = preds
            .remove(&doc.name)
            .ok_or_else(|| Failure::Data(anyhow!("no prediction for document {}", doc.name)))?;
        pairs.push((p, doc));
    }
    if let Some(extra) = preds.keys().next() {
        log::warn!("prediction for {extra} has no ground truth and is ignored");
    }
    let averaging = if a.per_document { Averaging::PerDocument } else { Averaging::Micro };
    let report = evaluate(&pairs, averaging, Execution::Parallel);
    log::info!("\n{report}");
    emit(None, &report.to_json())
}

fn gradcheck(a: &GradcheckArgs) -> Outcome<()> {
    let target = match a.target {
        CheckTarget::Linear => GradcheckTarget::Linear,
        CheckTarget::ProposalMlp => GradcheckTarget::ProposalMlp,
    };
    let opts = GradcheckOptions {
        eps: a.eps,
        seed: a.seed,
        draws: a.draws,
        ..GradcheckOptions::default()
    };
    let report = finite_diff_gradcheck(target, &opts).usage()?;
    let pass = report.max_relative_error < a.tolerance;
    emit(None, &to_json(&json!({ "report": report, "tolerance": a.tolerance, "pass": pass })))?;
    if pass {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {:e} exceeds {:e}",
            report.max_relative_error, a.tolerance
        )))
    }
}

fn init_weights(a: &InitArgs) -> Outcome<()> {
    let cfg = ModelConfig::standard(a.classes);
    cfg.validate().map_err(|e| anyhow!(e)).usage()?;
    ModelWeights::init(&cfg, a.seed)
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))
        .data()
}

fn train(a: &TrainArgs) -> Outcome<()> {
    let docs = load_docs(&a.input)?;
    let classes = docs[0].class_set.len();
    if docs.iter().any(|d| d.class_set.len() != classes) {
        return Err(Failure::Data(anyhow!("documents disagree on the class set")));
    }
    let mut weights = match &a.init {
        Some(p) => {
            let (w, cfg) = load_weights(p)?;
            if cfg.class_count != classes {
                return Err(Failure::Usage(anyhow!(
                    "weights have {} classes, documents have {classes}",
                    cfg.class_count
                )));
            }
            w
        }
        None => ModelWeights::init(&ModelConfig::standard(classes), a.seed),
    };
    let cfg = ModelConfig::infer(&weights).usage()?;
    let samples = training_pairs(&docs, Execution::Parallel).data()?;
    let tc = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        batch: a.batch,
        hidden: cfg.proposal_hidden,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let result = train_proposal_mlp(&samples, &tc).data()?;
    let accuracy = pair_accuracy(&result.mlp, &samples).data()?;
    store_proposal(&result.mlp, &mut weights).usage()?;
    weights
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))
        .data()?;
    let summary = json!({
        "documents": docs.len(),
        "pairs": samples.len(),
        "steps": a.steps,
        "final_loss": result.loss_curve.last(),
        "train_accuracy": accuracy,
    });
    emit(None, &to_json(&summary))
}

fn run(cli: &Cli) -> Outcome<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::Usage(anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().usage()?;
    }
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Propose(a) => propose(a),
        Command::Infer(a) => infer(a),
        Command::Align(a) => align(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::InitWeights(a) => init_weights(a),
        Command::TrainProposal(a) => train(a),
    }
}

fn report(kind: &str, msg: impl Display) {
    eprintln!("formgraph: {kind}: {msg}");
}

/// The error chain, skipping causes already quoted by their parent.
fn chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FORMGRAPH_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            report("check failed", msg);
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            report("invalid input", chain(&e));
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            report("data error", chain(&e));
            ExitCode::from(3)
        }
    }
}
