use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::{ClassStats, ConfusionMatrix, Metrics};
use super::pipeline::{Pipeline, Prediction};
use super::report::{EvalReport, StoreDelta};
use super::HarnessError;
use crate::corpus::{Corpus, LabeledResponse, Scheme, Split};
use crate::derive_seed;
use crate::embed::{
    train_adapters, AdaptedEmbedder, BaseEmbedder, HashEmbedder, LossKind, TextEmbedder,
    TrainConfig,
};
use crate::glm::{GenParams, GlmBackend, GlmError, MockBackend, RemoteBackend, ReplayBackend};
use crate::pairset::{build_training_sets, LabelingStrategy, PairsetConfig, Scope, TripletCap};
use crate::promptkit::{load_template, PromptTemplate, Scenario, Style, Task};
use crate::vstore::{MetadataPolicy, RetrievalConfig, RetrievalScope, VectorStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackendSpec {
    Mock,
    /// Configured from `RAGSCORE_GLM_*` environment variables.
    Remote,
    Replay {
        path: PathBuf,
    },
}

impl BackendSpec {
    pub fn build(&self) -> Result<Box<dyn GlmBackend>, GlmError> {
        Ok(match self {
            BackendSpec::Mock => Box::new(MockBackend),
            BackendSpec::Remote => Box::new(RemoteBackend::from_env()?),
            BackendSpec::Replay { path } => Box::new(ReplayBackend::load(path)?),
        })
    }
}

impl std::str::FromStr for BackendSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "mock" => Ok(BackendSpec::Mock),
            None if s == "remote" => Ok(BackendSpec::Remote),
            Some(("replay", path)) if !path.is_empty() => {
                Ok(BackendSpec::Replay { path: path.into() })
            }
            _ => Err(format!(
                "unknown backend {s:?} (expected mock, remote or replay:<log.jsonl>)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: Option<PathBuf>,
    pub scheme: Scheme,
    pub strategy: LabelingStrategy,
    pub scope: Scope,
    pub triplet_cap: TripletCap,
    /// Adapter training loss; `None` retrieves with the base embedder.
    pub loss: Option<LossKind>,
    pub train: TrainConfig,
    pub embedding_dim: usize,
    pub k: usize,
    /// Defaults to same-question retrieval, corpus-wide for RAG-fraction runs.
    pub retrieval_scope: Option<RetrievalScope>,
    pub style: Style,
    pub backend: BackendSpec,
    pub model_id: String,
    /// One run per seed.
    pub seeds: Vec<u64>,
    pub rag_fraction: Option<f64>,
    /// Label recorded when a completion cannot be parsed; the scheme's
    /// default when unset.
    pub fallback_label: Option<String>,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: None,
            scheme: Scheme::ThreeWay,
            strategy: LabelingStrategy::Strict,
            scope: Scope::QuestionSpecific,
            triplet_cap: TripletCap::default(),
            loss: None,
            train: TrainConfig::default(),
            embedding_dim: crate::embed::DEFAULT_DIM,
            k: 5,
            retrieval_scope: None,
            style: Style::Cpg,
            backend: BackendSpec::Mock,
            model_id: "mock".into(),
            seeds: vec![0],
            rag_fraction: None,
            fallback_label: None,
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if let Some(f) = self.rag_fraction {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("rag_fraction must lie in (0, 1), got {f}"));
            }
        }
        if let Some(label) = &self.fallback_label {
            if self.scheme.canonical(label).is_none() {
                return bad(format!(
                    "fallback label {label:?} is not a {} label",
                    self.scheme
                ));
            }
        }
        if self.loss.is_some() {
            self.train.validate()?;
        }
        Ok(())
    }

    pub fn runs(&self) -> usize {
        self.seeds.len()
    }

    pub fn fallback(&self) -> &'static str {
        self.fallback_label
            .as_deref()
            .and_then(|l| self.scheme.canonical(l))
            .unwrap_or(self.scheme.fallback_label())
    }

    fn template(&self, scenario: Scenario) -> Result<PromptTemplate, HarnessError> {
        Ok(load_template(
            Task::for_scheme(self.scheme),
            scenario,
            self.style,
        )?)
    }

    fn params(&self) -> GenParams {
        GenParams::scoring(self.model_id.clone())
    }
}

/// Embedder and training-split store for one seed.
pub struct Artifacts {
    pub embedder: AdaptedEmbedder,
    pub store: VectorStore,
}

/// Train adapters (if a loss is configured) and embed the training split.
pub fn prepare(
    config: &ExperimentConfig,
    corpus: &Corpus,
    seed: u64,
) -> Result<Artifacts, HarnessError> {
    let base: Arc<dyn BaseEmbedder> = Arc::new(HashEmbedder::new(config.embedding_dim));
    let embedder = match config.loss {
        None => AdaptedEmbedder::new(base),
        Some(loss) => {
            let sets = build_training_sets(
                corpus,
                &PairsetConfig {
                    scheme: config.scheme,
                    strategy: config.strategy,
                    scope: config.scope,
                    seed,
                    triplet_cap: config.triplet_cap,
                },
            );
            let train = TrainConfig {
                loss,
                seed,
                ..config.train
            };
            let (adapters, _) = train_adapters(&train, &sets, corpus, base.as_ref())?;
            AdaptedEmbedder::with_adapters(base, adapters)
        }
    };
    let store = VectorStore::build(
        corpus.split(Split::Train),
        Some(corpus),
        &embedder,
        MetadataPolicy::default(),
    )?;
    Ok(Artifacts { embedder, store })
}

struct RunResult {
    metrics: Metrics,
    confusion: ConfusionMatrix,
    predictions: Vec<Prediction>,
}

#[allow(clippy::too_many_arguments)]
fn score_run(
    config: &ExperimentConfig,
    corpus: &Corpus,
    artifacts: &Artifacts,
    store: &VectorStore,
    template: &PromptTemplate,
    scope: RetrievalScope,
    backend: &dyn GlmBackend,
    responses: &[&LabeledResponse],
) -> Result<RunResult, HarnessError> {
    let pipeline = Pipeline {
        corpus,
        store,
        embedder: &artifacts.embedder,
        backend,
        template,
        retrieval: RetrievalConfig { k: config.k, scope },
        scheme: config.scheme,
        params: config.params(),
        fallback: config.fallback(),
        workers: config.workers,
    };
    let scored = pipeline.score(responses)?;
    Ok(RunResult {
        metrics: scored.confusion.metrics()?,
        confusion: scored.confusion,
        predictions: scored.predictions,
    })
}

fn summarize(
    config: &ExperimentConfig,
    split: Split,
    runs: Vec<RunResult>,
    manifest: serde_json::Value,
    store_delta: Option<StoreDelta>,
) -> Result<EvalReport, HarnessError> {
    let per_run: Vec<Metrics> = runs.iter().map(|r| r.metrics).collect();
    let metrics = Metrics::mean(&per_run).ok_or_else(|| HarnessError::Config("no runs".into()))?;
    let n = runs.len() as f64;
    let mut per_class: Vec<ClassStats> = runs[0].confusion.per_class();
    for c in per_class.iter_mut() {
        c.precision = 0.0;
        c.recall = 0.0;
        c.f1 = 0.0;
    }
    for r in &runs {
        for (acc, c) in per_class.iter_mut().zip(r.confusion.per_class()) {
            acc.precision += c.precision / n;
            acc.recall += c.recall / n;
            acc.f1 += c.f1 / n;
        }
    }
    let mut confusion = runs[0].confusion.clone();
    for r in &runs[1..] {
        confusion.merge(&r.confusion)?;
    }
    Ok(EvalReport {
        scenario: split,
        scheme: config.scheme,
        metrics,
        per_class,
        parse_failures: confusion.parse_failures(),
        runs: runs.len(),
        seeds: config.seeds.clone(),
        per_run,
        confusion,
        predictions: runs
            .into_iter()
            .next()
            .map(|r| r.predictions)
            .unwrap_or_default(),
        store_delta,
        manifest,
    })
}

fn manifest(
    config: &ExperimentConfig,
    corpus: &Corpus,
    split: Split,
    template: &PromptTemplate,
    a: &Artifacts,
) -> serde_json::Value {
    json!({
        "config": config,
        "corpus": corpus.name(),
        "split": split,
        "template": {"id": template.id, "sha256": template.sha256()},
        "embedder": a.embedder.id(),
        "store_entries": a.store.len(),
        "crate_version": env!("CARGO_PKG_VERSION"),
    })
}

/// Score one test split, averaging metrics over the configured seeds.
///
/// Unseen answers are scored with example-bearing templates; unseen
/// questions and domains without, unless `rag_fraction` is set, in which
/// case this delegates to [`rag_fraction_experiment`].
pub fn run_scenario(
    config: &ExperimentConfig,
    corpus: &Corpus,
    split: Split,
    backend: &dyn GlmBackend,
) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    if split == Split::Train {
        return Err(HarnessError::Config(
            "the training split is not a test scenario".into(),
        ));
    }
    if let Some(f) = config.rag_fraction {
        return rag_fraction_experiment(config, corpus, f, split, backend);
    }
    if !corpus.has_split(split) {
        return Err(HarnessError::MissingSplit(split));
    }
    let template = config.template(Scenario::for_split(split))?;
    let responses: Vec<&LabeledResponse> = corpus.split(split).iter().collect();
    let scope = config
        .retrieval_scope
        .unwrap_or(RetrievalScope::SameQuestionOnly);
    let mut runs = Vec::new();
    let mut man = serde_json::Value::Null;
    for &seed in &config.seeds {
        let artifacts = prepare(config, corpus, seed)?;
        if man.is_null() {
            man = manifest(config, corpus, split, &template, &artifacts);
        }
        runs.push(score_run(
            config,
            corpus,
            &artifacts,
            &artifacts.store,
            &template,
            scope,
            backend,
            &responses,
        )?);
    }
    summarize(config, split, runs, man, None)
}

/// Uniformly sample `floor(fraction * n)` indices out of `n` under `seed`,
/// returned ascending.
pub fn sample_fraction(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let take = ((fraction * n as f64) + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, take.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Move a seeded fraction of an unseen-question or unseen-domain split into
/// the store and score the rest with example-bearing templates. Adapters
/// are trained on the training split only.
pub fn rag_fraction_experiment(
    config: &ExperimentConfig,
    corpus: &Corpus,
    fraction: f64,
    split: Split,
    backend: &dyn GlmBackend,
) -> Result<EvalReport, HarnessError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(HarnessError::Config(format!(
            "fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if !matches!(split, Split::Uq | Split::Ud) {
        return Err(HarnessError::Config(format!(
            "RAG-fraction runs apply to uq or ud, not {split}"
        )));
    }
    let config = ExperimentConfig {
        rag_fraction: Some(fraction),
        ..config.clone()
    };
    config.validate()?;
    if !corpus.has_split(split) {
        return Err(HarnessError::MissingSplit(split));
    }
    let template = config.template(Scenario::WithExamples)?;
    let scope = config.retrieval_scope.unwrap_or(RetrievalScope::CorpusWide);
    let test = corpus.split(split);
    let mut runs = Vec::new();
    let mut man = serde_json::Value::Null;
    let mut delta = None;
    for &seed in &config.seeds {
        let artifacts = prepare(&config, corpus, seed)?;
        let before = artifacts.embedder.adapters().fingerprint();
        let picked = sample_fraction(
            test.len(),
            fraction,
            derive_seed(seed, &format!("rag-fraction:{split}")),
        );
        let mut store = artifacts.store.clone();
        store.extend(
            picked.iter().map(|&i| &test[i]),
            Some(corpus),
            &artifacts.embedder,
            MetadataPolicy::default(),
        )?;
        let mut keep = vec![true; test.len()];
        for &i in &picked {
            keep[i] = false;
        }
        let scored: Vec<&LabeledResponse> = test
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(r, _)| r)
            .collect();
        if man.is_null() {
            man = manifest(&config, corpus, split, &template, &artifacts);
        }
        runs.push(score_run(
            &config, corpus, &artifacts, &store, &template, scope, backend, &scored,
        )?);
        if artifacts.embedder.adapters().fingerprint() != before {
            return Err(HarnessError::Config(
                "adapter changed during a RAG-fraction run".into(),
            ));
        }
        delta = Some(StoreDelta {
            base_entries: artifacts.store.len(),
            added: picked.len(),
            scored: scored.len(),
            added_ids: picked.iter().map(|&i| test[i].id.clone()).collect(),
        });
    }
    summarize(&config, split, runs, man, delta)
}
