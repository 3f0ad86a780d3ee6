//! Beam-style prompt optimization: a critic proposes rewrites of the best
//! templates so far, each is scored on a dev set, and the top `B` survive.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabeledResponse;
use crate::glm::{GenParams, GlmBackend, GlmError};
use crate::harness::{ConfusionMatrix, HarnessError, Pipeline};
use crate::promptkit::{Placeholder, PromptError, PromptTemplate};
use crate::sha256_hex;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MacroF1,
    WeightedF1,
}

impl Metric {
    pub fn of(self, cm: &ConfusionMatrix) -> Result<f64, HarnessError> {
        Ok(match self {
            Metric::Accuracy => cm.accuracy()?,
            Metric::MacroF1 => cm.macro_f1()?,
            Metric::WeightedF1 => cm.weighted_f1()?,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
            Metric::WeightedF1 => "weighted_f1",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            "macro_f1" | "m_f1" => Ok(Metric::MacroF1),
            "weighted_f1" | "w_f1" => Ok(Metric::WeightedF1),
            _ => Err(format!("unknown metric {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Number of optimization steps `D`.
    pub steps: usize,
    /// Proposals per step and retained-set size `B`.
    pub beam: usize,
    pub metric: Metric,
    pub task_params: GenParams,
    pub critic_params: GenParams,
    pub seed: u64,
    /// Re-requests allowed for an invalid proposal before it is skipped.
    pub max_rerequests: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            steps: 3,
            beam: 2,
            metric: Metric::Accuracy,
            task_params: GenParams::scoring("mock"),
            critic_params: GenParams::critic("mock"),
            seed: 0,
            max_rerequests: 3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.steps == 0 || self.beam == 0 {
            return Err(OptimizerError::Config(
                "steps and beam must both be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub template: PromptTemplate,
    pub sha: String,
    pub parent: Option<String>,
    pub step: usize,
    /// Creation order; lower means earlier lineage.
    pub order: usize,
    score: Option<f64>,
}

impl Candidate {
    fn new(template: PromptTemplate, parent: Option<String>, step: usize, order: usize) -> Self {
        let sha = template.sha256();
        Candidate {
            template,
            sha,
            parent,
            step,
            order,
            score: None,
        }
    }

    pub fn score(&self) -> Option<f64> {
        self.score
    }

    fn set_score(&mut self, s: f64) {
        if self.score.is_none() {
            self.score = Some(s);
        }
    }
}

/// Scores a template on a fixed dev set.
pub trait CandidateScorer {
    fn dev_set_id(&self) -> String;
    fn score(&self, template: &PromptTemplate) -> Result<f64, OptimizerError>;
}

/// Runs the scoring pipeline over labeled dev responses with the candidate
/// template substituted in.
pub struct DevSetScorer<'a> {
    pub pipeline: Pipeline<'a>,
    pub responses: Vec<&'a LabeledResponse>,
    pub metric: Metric,
    parse_failures: Mutex<u64>,
}

impl<'a> DevSetScorer<'a> {
    pub fn new(
        pipeline: Pipeline<'a>,
        responses: Vec<&'a LabeledResponse>,
        metric: Metric,
    ) -> Self {
        DevSetScorer {
            pipeline,
            responses,
            metric,
            parse_failures: Mutex::new(0),
        }
    }

    pub fn parse_failures(&self) -> u64 {
        *self.parse_failures.lock().expect("counter lock")
    }
}

impl CandidateScorer for DevSetScorer<'_> {
    fn dev_set_id(&self) -> String {
        let ids: Vec<&str> = self.responses.iter().map(|r| r.id.as_str()).collect();
        sha256_hex(ids.join("\n").as_bytes())
    }

    fn score(&self, template: &PromptTemplate) -> Result<f64, OptimizerError> {
        let pipeline = Pipeline {
            template,
            ..self.pipeline.clone_parts()
        };
        let scored = pipeline.score(&self.responses)?;
        *self.parse_failures.lock().expect("counter lock") += scored.confusion.parse_failures();
        Ok(self.metric.of(&scored.confusion)?)
    }
}

impl<'a> Pipeline<'a> {
    fn clone_parts(&self) -> Pipeline<'a> {
        Pipeline {
            corpus: self.corpus,
            store: self.store,
            embedder: self.embedder,
            backend: self.backend,
            template: self.template,
            retrieval: self.retrieval,
            scheme: self.scheme,
            params: self.params.clone(),
            fallback: self.fallback,
            workers: self.workers,
        }
    }
}

/// Memoizes scores by `(template sha256, dev-set id)`.
#[derive(Debug, Default)]
pub struct ScoreCache {
    scores: HashMap<(String, String), f64>,
    pub hits: usize,
    pub misses: usize,
}

impl ScoreCache {
    pub fn evaluate(
        &mut self,
        template: &PromptTemplate,
        scorer: &dyn CandidateScorer,
    ) -> Result<f64, OptimizerError> {
        let key = (template.sha256(), scorer.dev_set_id());
        if let Some(s) = self.scores.get(&key) {
            self.hits += 1;
            return Ok(*s);
        }
        self.misses += 1;
        let s = scorer.score(template)?;
        self.scores.insert(key, s);
        Ok(s)
    }
}

const CRITIC_PROMPT: &str = "You are improving a prompt template used by a grader model to judge short student answers.
The template below scored {score} ({metric}) on a development set.
Write an improved version of the template. Keep every placeholder it contains exactly as written ({placeholders}) and do not add new ones.
This is variant {variant} of step {step}; make it distinct from other variants.
Return only the new template between <template> and </template> tags.

<template>
{body}
</template>";

fn critic_prompt(parent: &Candidate, metric: Metric, step: usize, variant: usize) -> String {
    let placeholders: Vec<String> = parent
        .template
        .placeholders()
        .iter()
        .map(|p| p.token())
        .collect();
    CRITIC_PROMPT
        .replace(
            "{score}",
            &parent.score.map_or("n/a".into(), |s| format!("{s:.4}")),
        )
        .replace("{metric}", metric.as_str())
        .replace("{placeholders}", &placeholders.join(", "))
        .replace("{variant}", &(variant + 1).to_string())
        .replace("{step}", &step.to_string())
        .replacen("{body}", parent.template.body(), 1)
}

fn template_block() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)<template>\n?(.*?)\n?</template>").expect("valid regex"))
}

/// The last `<template>` block of a critic reply, or the whole reply.
pub fn extract_template(reply: &str) -> &str {
    template_block()
        .captures_iter(reply)
        .last()
        .map(|c| c.get(1).expect("group 1").as_str())
        .unwrap_or(reply)
}

/// A proposed template and the candidate it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub template: PromptTemplate,
    pub parent: String,
}

/// Ask the critic for `beam` rewrites, cycling through `history` (best
/// first) as parents. Proposals that change the placeholder set are
/// re-requested up to `max_rerequests` times and then skipped.
pub fn propose(
    critic: &dyn GlmBackend,
    history: &[Candidate],
    beam: usize,
    config: &OptimizerConfig,
    step: usize,
) -> Vec<Proposal> {
    assert!(
        !history.is_empty(),
        "history must contain at least the draft"
    );
    let mut out = Vec::new();
    for variant in 0..beam {
        let parent = &history[variant % history.len()];
        let prompt = critic_prompt(parent, config.metric, step, variant);
        let mut wanted: Vec<Placeholder> = parent.template.placeholders();
        wanted.sort();
        let mut accepted = None;
        for attempt in 0..=config.max_rerequests {
            let reply = match critic.complete(&prompt, &config.critic_params) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!(
                        "critic failed on step {step} variant {variant} attempt {attempt}: {e}"
                    );
                    continue;
                }
            };
            let body = extract_template(&reply);
            let id = format!("{}-s{step}v{variant}", parent.template.id);
            match parent.template.with_body(id, body) {
                Ok(t) => {
                    let mut got = t.placeholders();
                    got.sort();
                    if got == wanted {
                        accepted = Some(t);
                        break;
                    }
                    log::warn!(
                        "proposal changed placeholders {wanted:?} -> {got:?}; re-requesting"
                    );
                }
                Err(e) => log::warn!("invalid proposal: {e}; re-requesting"),
            }
        }
        match accepted {
            Some(template) => out.push(Proposal {
                template,
                parent: parent.sha.clone(),
            }),
            None => log::warn!(
                "step {step} variant {variant} skipped after {} attempts",
                config.max_rerequests + 1
            ),
        }
    }
    if out.len() < beam {
        log::warn!("step {step}: {} of {beam} proposals usable", out.len());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub candidate_sha: String,
    pub parent_sha: Option<String>,
    pub score: f64,
    pub metric: Metric,
    pub dev_set_id: String,
}

#[derive(Debug)]
pub struct OptimizeResult {
    pub best: Candidate,
    pub retained: Vec<Candidate>,
    pub history: Vec<HistoryRecord>,
    /// Best retained score after step 0 (the draft) and after each step.
    pub best_trace: Vec<f64>,
    pub cache_hits: usize,
}

impl OptimizeResult {
    pub fn history_jsonl(&self) -> String {
        self.history
            .iter()
            .map(|h| serde_json::to_string(h).expect("record serializes") + "\n")
            .collect()
    }

    /// Write `history.jsonl` and the best template as `best.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), OptimizerError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("history.jsonl"), self.history_jsonl())?;
        self.best.template.save(dir.join("best.txt"))?;
        Ok(())
    }
}

fn rank(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    let (sa, sb) = (
        a.score.unwrap_or(f64::NEG_INFINITY),
        b.score.unwrap_or(f64::NEG_INFINITY),
    );
    sb.total_cmp(&sa).then(a.order.cmp(&b.order))
}

/// Run `config.steps` propose/evaluate/rank rounds starting from `draft`.
pub fn optimize(
    config: &OptimizerConfig,
    draft: PromptTemplate,
    critic: &dyn GlmBackend,
    scorer: &dyn CandidateScorer,
) -> Result<OptimizeResult, OptimizerError> {
    config.validate()?;
    let dev_set_id = scorer.dev_set_id();
    let mut cache = ScoreCache::default();
    let mut history = Vec::new();
    let mut next_order = 0;
    let record = |c: &Candidate, history: &mut Vec<HistoryRecord>| {
        history.push(HistoryRecord {
            step: c.step,
            candidate_sha: c.sha.clone(),
            parent_sha: c.parent.clone(),
            score: c.score.expect("scored"),
            metric: config.metric,
            dev_set_id: dev_set_id.clone(),
        })
    };

    let mut root = Candidate::new(draft, None, 0, next_order);
    next_order += 1;
    root.set_score(cache.evaluate(&root.template, scorer)?);
    record(&root, &mut history);
    let mut retained = vec![root];
    let mut best_trace = vec![retained[0].score.expect("scored")];

    for step in 1..=config.steps {
        let proposals = propose(critic, &retained, config.beam, config, step);
        let mut fresh: Vec<Candidate> = Vec::new();
        for p in proposals {
            let sha = p.template.sha256();
            if retained.iter().chain(&fresh).any(|c| c.sha == sha) {
                log::info!("step {step}: proposal {sha} duplicates a retained candidate");
                continue;
            }
            let mut c = Candidate::new(p.template, Some(p.parent), step, next_order);
            next_order += 1;
            c.set_score(cache.evaluate(&c.template, scorer)?);
            record(&c, &mut history);
            fresh.push(c);
        }
        if fresh.is_empty() {
            log::info!("step {step}: no usable proposals");
        }
        retained.extend(fresh);
        retained.sort_by(rank);
        retained.truncate(config.beam);
        best_trace.push(retained[0].score.expect("scored"));
    }
    Ok(OptimizeResult {
        best: retained[0].clone(),
        retained,
        history,
        best_trace,
        cache_hits: cache.hits,
    })
}

/// Critic that hands back the template it was shown.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoCritic;

impl GlmBackend for EchoCritic {
    fn id(&self) -> String {
        "echo-critic".into()
    }

    fn complete(&self, prompt: &str, _params: &GenParams) -> Result<String, GlmError> {
        Ok(format!(
            "<template>\n{}\n</template>",
            extract_template(prompt)
        ))
    }
}

/// Critic replaying a fixed sequence of replies.
#[derive(Debug, Default)]
pub struct ScriptedCritic {
    replies: Mutex<VecDeque<Result<String, String>>>,
}

impl ScriptedCritic {
    pub fn new(replies: impl IntoIterator<Item = String>) -> Self {
        ScriptedCritic {
            replies: Mutex::new(replies.into_iter().map(Ok).collect()),
        }
    }

    /// Queue a transport failure.
    pub fn push_failure(&self, message: impl Into<String>) {
        self.replies
            .lock()
            .expect("script lock")
            .push_back(Err(message.into()));
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("script lock").len()
    }
}

impl GlmBackend for ScriptedCritic {
    fn id(&self) -> String {
        "scripted-critic".into()
    }

    fn complete(&self, _prompt: &str, _params: &GenParams) -> Result<String, GlmError> {
        match self.replies.lock().expect("script lock").pop_front() {
            Some(Ok(r)) => Ok(r),
            Some(Err(e)) => Err(GlmError::Transport(e)),
            None => Err(GlmError::Transport("script exhausted".into())),
        }
    }
}
