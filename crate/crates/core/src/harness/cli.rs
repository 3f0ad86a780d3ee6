//! `ragscore` command line.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime error, 64 usage
//! error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use super::{
    format_table, prepare, rag_fraction_experiment, run_scenario, BackendSpec, EvalReport,
    ExperimentConfig, HarnessError, Pipeline,
};
use crate::corpus::{self, Corpus, CorpusError, Scheme, Split};
use crate::embed::{
    train_adapters, AdaptedEmbedder, BaseEmbedder, EmbedError, EmbeddingAdapter, HashEmbedder,
    LossKind, TrainConfig, TrainedAdapters, DEFAULT_DIM,
};
use crate::glm::{parse_judgment, GlmBackend};
use crate::optimizer::{optimize, DevSetScorer, EchoCritic, Metric, OptimizerConfig};
use crate::pairset::{build_training_sets, LabelingStrategy, PairsetConfig, Scope, TripletCap};
use crate::promptkit::{load_template, Scenario, Style, Task};
use crate::vstore::{MetadataPolicy, RetrievalConfig, RetrievalScope, VectorStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "ragscore",
    version,
    about = "Retrieval-augmented short-answer scoring"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a SemEval-style XML directory or a JSONL corpus and write JSONL.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Check split membership rules and print per-split label counts.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Mine labeled pairs and triplets from the training split.
    BuildPairs {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "3way")]
        scheme: Scheme,
        #[arg(long, default_value = "strict")]
        strategy: LabelingStrategy,
        #[arg(long, default_value = "question")]
        scope: Scope,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed triplets per anchor (default: half the same-category peers).
        #[arg(long)]
        triplet_cap: Option<usize>,
        #[arg(long, default_value = "pairs")]
        out_dir: PathBuf,
    },
    /// Train embedding adapters and write them to a directory.
    TrainEmbedder {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "3way")]
        scheme: Scheme,
        #[arg(long, default_value = "strict")]
        strategy: LabelingStrategy,
        #[arg(long, default_value = "question")]
        scope: Scope,
        #[arg(long, default_value = "cosine_sentence")]
        loss: LossKind,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_DIM)]
        dim: usize,
        #[arg(long, default_value = "adapters")]
        out_dir: PathBuf,
    },
    /// Embed the training split into a vector store file.
    BuildVdb {
        #[arg(long)]
        corpus: PathBuf,
        /// Adapter directory written by train-embedder.
        #[arg(long)]
        adapters: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DIM)]
        dim: usize,
        #[arg(long, default_value = "store.vdb")]
        out: PathBuf,
    },
    /// Score a single answer.
    Score {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        question_id: String,
        #[arg(long)]
        answer: String,
        /// Store file; built from the training split when absent.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        adapters: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DIM)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = "same_question")]
        retrieval_scope: RetrievalScope,
        #[arg(long, default_value = "3way")]
        scheme: Scheme,
        #[arg(long, default_value = "cpg")]
        style: Style,
        #[arg(long, default_value = "mock")]
        backend: BackendSpec,
        #[arg(long, default_value = "mock")]
        model: String,
        /// Use the template without retrieved examples.
        #[arg(long)]
        no_examples: bool,
    },
    /// Score test splits and report Acc / M-F1 / W-F1.
    Evaluate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// ua, uq or ud; all available splits when omitted.
        #[arg(long)]
        scenario: Option<Split>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Move a fraction of an unseen split into the store and score the rest.
    RagFraction {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value = "uq")]
        scenario: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Improve the grading template against a dev split.
    OptimizePrompt {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 3)]
        steps: usize,
        #[arg(long, default_value_t = 2)]
        beam: usize,
        #[arg(long, default_value = "accuracy")]
        metric: Metric,
        /// echo, remote or replay:<log.jsonl>.
        #[arg(long, default_value = "echo")]
        critic: String,
        #[arg(long, default_value = "ua")]
        dev_split: Split,
        #[arg(long)]
        dev_limit: Option<usize>,
        #[arg(long, default_value = "optimized")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSON experiment config; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    strategy: Option<LabelingStrategy>,
    #[arg(long)]
    scope: Option<Scope>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    retrieval_scope: Option<RetrievalScope>,
    #[arg(long)]
    style: Option<Style>,
    #[arg(long)]
    backend: Option<BackendSpec>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Corpus(_) | HarnessError::MissingSplit(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult = Result<(), CliError>;

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(runtime)?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        c.corpus = Some(self.corpus.clone());
        macro_rules! set {
            ($field:ident => $target:expr) => {
                if let Some(v) = self.$field.clone() {
                    $target = v;
                }
            };
        }
        set!(scheme => c.scheme);
        set!(strategy => c.strategy);
        set!(scope => c.scope);
        set!(epochs => c.train.epochs);
        set!(lr => c.train.learning_rate);
        set!(dim => c.embedding_dim);
        set!(k => c.k);
        set!(style => c.style);
        set!(backend => c.backend);
        set!(model => c.model_id);
        set!(workers => c.workers);
        if self.loss.is_some() {
            c.loss = self.loss;
        }
        if self.retrieval_scope.is_some() {
            c.retrieval_scope = self.retrieval_scope;
        }
        match (self.runs, &self.seeds) {
            (Some(n), Some(s)) if n != s.len() => {
                return Err(CliError::Validation(format!(
                    "--runs {n} does not match {} seeds",
                    s.len()
                )))
            }
            (_, Some(s)) => c.seeds = s.clone(),
            (Some(n), None) => c.seeds = (0..n as u64).collect(),
            (None, None) => {}
        }
        c.validate()?;
        Ok(c)
    }
}

/// Load a JSONL corpus, or a SemEval-style XML tree when given a directory.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    if path.is_dir() {
        corpus::parse_semeval_xml(path)
    } else {
        corpus::parse_jsonl(path)
    }
}

fn corpus_at(path: &Path) -> Result<Corpus, CliError> {
    load_corpus(path).map_err(|e| match e {
        CorpusError::Io(_) => CliError::Runtime(format!("{}: {e}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    fs::write(
        path,
        serde_json::to_string_pretty(value).map_err(runtime)? + "\n",
    )
    .map_err(runtime)
}

/// Write adapters as `global.adapter` and `q-NNNN.adapter` files.
pub fn save_adapters(
    adapters: &TrainedAdapters,
    dir: &Path,
) -> Result<Vec<PathBuf>, std::io::Error> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut save = |a: &EmbeddingAdapter, name: String| -> Result<(), std::io::Error> {
        let p = dir.join(name);
        a.save(&p)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        written.push(p);
        Ok(())
    };
    if let Some(g) = &adapters.global {
        save(g, "global.adapter".into())?;
    }
    for (i, a) in adapters.per_question.values().enumerate() {
        save(a, format!("q-{i:04}.adapter"))?;
    }
    Ok(written)
}

/// Read every `*.adapter` in `dir`, keyed by the question id in its header.
pub fn load_adapters(dir: &Path) -> Result<TrainedAdapters, EmbedError> {
    let mut out = TrainedAdapters::default();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "adapter"))
        .collect();
    paths.sort();
    for p in paths {
        let a = EmbeddingAdapter::load(&p)
            .map_err(|e| EmbedError::Format(format!("{}: {e}", p.display())))?;
        match a.header.question_id.clone() {
            Some(q) => {
                out.per_question.insert(q, a);
            }
            None => out.global = Some(a),
        }
    }
    Ok(out)
}

fn embedder(dim: usize, adapters: Option<&Path>) -> Result<AdaptedEmbedder, CliError> {
    let base: Arc<dyn BaseEmbedder> = Arc::new(HashEmbedder::new(dim));
    Ok(match adapters {
        Some(dir) => {
            let a = load_adapters(dir).map_err(runtime)?;
            if let Some(bad) = a
                .global
                .iter()
                .chain(a.per_question.values())
                .find(|a| a.dim() != dim)
            {
                return Err(CliError::Validation(format!(
                    "adapter dim {} does not match --dim {dim}",
                    bad.dim()
                )));
            }
            AdaptedEmbedder::with_adapters(base, a)
        }
        None => AdaptedEmbedder::new(base),
    })
}

fn cmd_ingest(input: &Path, output: &Path) -> CliResult {
    let c = corpus_at(input)?;
    corpus::write_jsonl(&c, output).map_err(runtime)?;
    let counts: BTreeMap<String, usize> =
        c.splits().map(|(s, r)| (s.to_string(), r.len())).collect();
    println!(
        "{}",
        json!({"corpus": c.name(), "questions": c.questions().len(), "responses": counts})
    );
    Ok(())
}

fn cmd_validate(path: &Path) -> CliResult {
    let c = corpus_at(path)?;
    let report = corpus::validate(&c);
    for (split, responses) in c.splits() {
        let counts: Vec<String> = corpus::Label5::ALL
            .iter()
            .map(|l| format!("{}={}", l.as_str(), report.count(split, *l)))
            .collect();
        println!("{split:<5} {:>6}  {}", responses.len(), counts.join("  "));
    }
    if report.is_valid() {
        println!("ok");
        Ok(())
    } else {
        for v in &report.violations {
            println!("violation: {v}");
        }
        Err(CliError::Validation(format!(
            "{} violations",
            report.violations.len()
        )))
    }
}

fn cmd_build_pairs(corpus: &Path, config: PairsetConfig, out_dir: &Path) -> CliResult {
    let c = corpus_at(corpus)?;
    let sets = build_training_sets(&c, &config);
    fs::create_dir_all(out_dir).map_err(runtime)?;
    fs::write(out_dir.join("pairs.jsonl"), sets.pairs_jsonl()).map_err(runtime)?;
    fs::write(out_dir.join("triplets.jsonl"), sets.triplets_jsonl()).map_err(runtime)?;
    let manifest = serde_json::to_value(&sets.manifest).map_err(runtime)?;
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    println!("{manifest}");
    Ok(())
}

fn cmd_train(
    corpus: &Path,
    pairs: PairsetConfig,
    train: TrainConfig,
    dim: usize,
    out_dir: &Path,
) -> CliResult {
    let c = corpus_at(corpus)?;
    train
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let sets = build_training_sets(&c, &pairs);
    let base = HashEmbedder::new(dim);
    let (adapters, traces) = train_adapters(&train, &sets, &c, &base).map_err(runtime)?;
    let written = save_adapters(&adapters, out_dir).map_err(runtime)?;
    let summary: BTreeMap<&String, serde_json::Value> = traces
        .iter()
        .map(|(k, t)| {
            (
                k,
                json!({"epoch_mean_losses": t.epoch_mean_losses, "batches": t.batch_losses.len()}),
            )
        })
        .collect();
    write_json(
        &out_dir.join("traces.json"),
        &serde_json::to_value(&traces).map_err(runtime)?,
    )?;
    write_json(
        &out_dir.join("manifest.json"),
        &json!({"pairset": sets.manifest, "train": train, "base_embedder": BaseEmbedder::id(&base), "adapters": written.len()}),
    )?;
    println!("{}", json!({"adapters": written.len(), "traces": summary}));
    Ok(())
}

fn cmd_build_vdb(corpus: &Path, adapters: Option<&Path>, dim: usize, out: &Path) -> CliResult {
    let c = corpus_at(corpus)?;
    let e = embedder(dim, adapters)?;
    let store = VectorStore::build(
        c.split(Split::Train),
        Some(&c),
        &e,
        MetadataPolicy::default(),
    )
    .map_err(runtime)?;
    store.save(out).map_err(runtime)?;
    println!(
        "{}",
        json!({"entries": store.len(), "dim": store.dim(), "embedder": store.embedder_id()})
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_score(
    corpus: &Path,
    question_id: &str,
    answer: &str,
    store: Option<&Path>,
    adapters: Option<&Path>,
    dim: usize,
    retrieval: RetrievalConfig,
    scheme: Scheme,
    style: Style,
    backend: &BackendSpec,
    model: &str,
    no_examples: bool,
) -> CliResult {
    let c = corpus_at(corpus)?;
    if c.question(question_id).is_none() {
        return Err(CliError::Validation(format!(
            "unknown question {question_id:?}"
        )));
    }
    let e = embedder(dim, adapters)?;
    let store = match store {
        Some(p) => VectorStore::load(p).map_err(runtime)?,
        None => VectorStore::build(
            c.split(Split::Train),
            Some(&c),
            &e,
            MetadataPolicy::default(),
        )
        .map_err(runtime)?,
    };
    let scenario = if no_examples {
        Scenario::WithoutExamples
    } else {
        Scenario::WithExamples
    };
    let template = load_template(Task::for_scheme(scheme), scenario, style).map_err(runtime)?;
    let backend = backend.build().map_err(runtime)?;
    let pipeline = Pipeline {
        corpus: &c,
        store: &store,
        embedder: &e,
        backend: backend.as_ref(),
        template: &template,
        retrieval,
        scheme,
        params: crate::glm::GenParams::scoring(model),
        fallback: scheme.fallback_label(),
        workers: 1,
    };
    let (prompt, neighbors) = pipeline.prompt_for(answer, question_id).map_err(runtime)?;
    let raw = backend
        .complete(&prompt, &pipeline.params)
        .map_err(runtime)?;
    let parsed = parse_judgment(&raw, scheme, style);
    let neighbors: Vec<serde_json::Value> = neighbors
        .iter()
        .map(|&i| {
            let m = store.metadata(i);
            json!({"index": i, "response_id": m.response_id, "judgment": m.judgment})
        })
        .collect();
    println!(
        "{}",
        json!({
            "label": parsed.as_ref().map(|j| j.label).unwrap_or(corpus::INCORRECT),
            "parse_failed": parsed.is_err(),
            "raw": raw,
            "neighbors": neighbors,
        })
    );
    Ok(())
}

fn write_reports(reports: &[EvalReport], out: Option<&Path>) -> CliResult {
    print!("{}", format_table(reports));
    if let Some(p) = out {
        write_json(p, &serde_json::to_value(reports).map_err(runtime)?)?;
    }
    Ok(())
}

fn cmd_evaluate(exp: &ExperimentArgs, scenario: Option<Split>, out: Option<&Path>) -> CliResult {
    let config = exp.config()?;
    let c = corpus_at(&exp.corpus)?;
    let backend = config.backend.build().map_err(runtime)?;
    let splits: Vec<Split> = match scenario {
        Some(Split::Train) => {
            return Err(CliError::Validation("train is not a test scenario".into()))
        }
        Some(s) => vec![s],
        None => [Split::Ua, Split::Uq, Split::Ud]
            .into_iter()
            .filter(|s| c.has_split(*s))
            .collect(),
    };
    if splits.is_empty() {
        return Err(CliError::Validation("corpus has no test splits".into()));
    }
    let mut reports = Vec::new();
    for s in splits {
        reports.push(run_scenario(&config, &c, s, backend.as_ref())?);
    }
    write_reports(&reports, out)
}

fn cmd_rag_fraction(
    exp: &ExperimentArgs,
    fraction: f64,
    scenario: Split,
    out: Option<&Path>,
) -> CliResult {
    let config = exp.config()?;
    let c = corpus_at(&exp.corpus)?;
    let backend = config.backend.build().map_err(runtime)?;
    let report = rag_fraction_experiment(&config, &c, fraction, scenario, backend.as_ref())?;
    if let Some(d) = &report.store_delta {
        println!(
            "store: {} entries + {} moved from {scenario}; {} scored",
            d.base_entries, d.added, d.scored
        );
    }
    write_reports(std::slice::from_ref(&report), out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    exp: &ExperimentArgs,
    steps: usize,
    beam: usize,
    metric: Metric,
    critic: &str,
    dev_split: Split,
    dev_limit: Option<usize>,
    out_dir: &Path,
) -> CliResult {
    let config = exp.config()?;
    let c = corpus_at(&exp.corpus)?;
    if !c.has_split(dev_split) {
        return Err(CliError::Validation(format!(
            "corpus has no {dev_split} split"
        )));
    }
    let backend = config.backend.build().map_err(runtime)?;
    let critic: Box<dyn GlmBackend> = match critic {
        "echo" => Box::new(EchoCritic),
        other => other
            .parse::<BackendSpec>()
            .map_err(CliError::Validation)?
            .build()
            .map_err(runtime)?,
    };
    let seed = config.seeds[0];
    let artifacts = prepare(&config, &c, seed)?;
    let draft = load_template(
        Task::for_scheme(config.scheme),
        Scenario::WithExamples,
        config.style,
    )
    .map_err(runtime)?;
    let responses: Vec<_> = c
        .split(dev_split)
        .iter()
        .take(dev_limit.unwrap_or(usize::MAX))
        .collect();
    let opt = OptimizerConfig {
        steps,
        beam,
        metric,
        task_params: crate::glm::GenParams::scoring(config.model_id.clone()),
        critic_params: crate::glm::GenParams::critic(config.model_id.clone()),
        seed,
        ..OptimizerConfig::default()
    };
    opt.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let pipeline = Pipeline {
        corpus: &c,
        store: &artifacts.store,
        embedder: &artifacts.embedder,
        backend: backend.as_ref(),
        template: &draft,
        retrieval: RetrievalConfig {
            k: config.k,
            scope: config
                .retrieval_scope
                .unwrap_or(RetrievalScope::SameQuestionOnly),
        },
        scheme: config.scheme,
        params: opt.task_params.clone(),
        fallback: config.fallback(),
        workers: config.workers,
    };
    let scorer = DevSetScorer::new(pipeline, responses, metric);
    let result = optimize(&opt, draft.clone(), critic.as_ref(), &scorer).map_err(runtime)?;
    result.save(out_dir).map_err(runtime)?;
    println!(
        "{}",
        json!({
            "best_sha256": result.best.sha,
            "best_score": result.best.score(),
            "trace": result.best_trace,
            "evaluated": result.history.len(),
            "cache_hits": result.cache_hits,
            "parse_failures": scorer.parse_failures(),
        })
    );
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest { input, output } => cmd_ingest(&input, &output),
        Command::Validate { corpus } => cmd_validate(&corpus),
        Command::BuildPairs {
            corpus,
            scheme,
            strategy,
            scope,
            seed,
            triplet_cap,
            out_dir,
        } => {
            let triplet_cap = triplet_cap.map_or(TripletCap::HalfPeers, TripletCap::Fixed);
            cmd_build_pairs(
                &corpus,
                PairsetConfig {
                    scheme,
                    strategy,
                    scope,
                    seed,
                    triplet_cap,
                },
                &out_dir,
            )
        }
        Command::TrainEmbedder {
            corpus,
            scheme,
            strategy,
            scope,
            loss,
            epochs,
            lr,
            batch_size,
            seed,
            dim,
            out_dir,
        } => {
            let mut train = TrainConfig {
                loss,
                seed,
                ..TrainConfig::default()
            };
            if let Some(e) = epochs {
                train.epochs = e;
            }
            if let Some(lr) = lr {
                train.learning_rate = lr;
            }
            if let Some(b) = batch_size {
                train.batch_size = b;
            }
            let pairs = PairsetConfig {
                scheme,
                strategy,
                scope,
                seed,
                triplet_cap: TripletCap::HalfPeers,
            };
            cmd_train(&corpus, pairs, train, dim, &out_dir)
        }
        Command::BuildVdb {
            corpus,
            adapters,
            dim,
            out,
        } => cmd_build_vdb(&corpus, adapters.as_deref(), dim, &out),
        Command::Score {
            corpus,
            question_id,
            answer,
            store,
            adapters,
            dim,
            k,
            retrieval_scope,
            scheme,
            style,
            backend,
            model,
            no_examples,
        } => {
            if k == 0 {
                return Err(CliError::Validation("k must be at least 1".into()));
            }
            cmd_score(
                &corpus,
                &question_id,
                &answer,
                store.as_deref(),
                adapters.as_deref(),
                dim,
                RetrievalConfig {
                    k,
                    scope: retrieval_scope,
                },
                scheme,
                style,
                &backend,
                &model,
                no_examples,
            )
        }
        Command::Evaluate { exp, scenario, out } => cmd_evaluate(&exp, scenario, out.as_deref()),
        Command::RagFraction {
            exp,
            fraction,
            scenario,
            out,
        } => cmd_rag_fraction(&exp, fraction, scenario, out.as_deref()),
        Command::OptimizePrompt {
            exp,
            steps,
            beam,
            metric,
            critic,
            dev_split,
            dev_limit,
            out_dir,
        } => cmd_optimize(
            &exp, steps, beam, metric, &critic, dev_split, dev_limit, &out_dir,
        ),
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            EXIT_VALIDATION
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}
