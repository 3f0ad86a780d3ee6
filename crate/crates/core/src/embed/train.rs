use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{self, LossGrad, PairExample, TripletExample};
use super::{BaseEmbedder, EmbedError, EmbeddingAdapter, Vector};
use crate::corpus::Corpus;
use crate::derive_seed;
use crate::pairset::TrainingSets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CosineSimilarity,
    CosineSentence,
    Triplet,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::CosineSimilarity => "cosine_similarity",
            LossKind::CosineSentence => "cosine_sentence",
            LossKind::Triplet => "triplet",
        }
    }
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cosine_similarity" | "cosine" | "cos" => Ok(LossKind::CosineSimilarity),
            "cosine_sentence" | "cosent" => Ok(LossKind::CosineSentence),
            "triplet" => Ok(LossKind::Triplet),
            _ => Err(format!("unknown loss {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub margin: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Temperature τ of the cosine sentence loss.
    pub scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::CosineSentence,
            batch_size: 8,
            learning_rate: 6e-6,
            weight_decay: 1e-7,
            max_grad_norm: 3.0,
            margin: 3.0,
            epochs: 3,
            seed: 0,
            scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.loss == LossKind::CosineSentence && self.batch_size < 2 {
            return bad("cosine sentence loss needs batch_size >= 2");
        }
        let positive = |v: f64| v > 0.0;
        if !positive(self.margin) {
            return bad("margin must be positive");
        }
        if ![self.learning_rate, self.max_grad_norm, self.scale]
            .into_iter()
            .all(positive)
        {
            return bad("learning_rate, max_grad_norm and scale must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Texts to train on: labeled pairs or triplets.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingData {
    Pairs(Vec<(String, String, f64)>),
    Triplets(Vec<(String, String, String)>),
}

impl TrainingData {
    pub fn len(&self) -> usize {
        match self {
            TrainingData::Pairs(p) => p.len(),
            TrainingData::Triplets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn kind(&self) -> &'static str {
        match self {
            TrainingData::Pairs(_) => "pair",
            TrainingData::Triplets(_) => "triplet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainTrace {
    pub batch_losses: Vec<f64>,
    pub epoch_mean_losses: Vec<f64>,
    /// Gradient norm before clipping, per step.
    pub grad_norms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub adapter: EmbeddingAdapter,
    pub trace: TrainTrace,
}

enum Prepared {
    Pairs(Vec<PairExample>),
    Triplets(Vec<TripletExample>),
}

fn embed_cached(
    base: &dyn BaseEmbedder,
    cache: &mut HashMap<String, Vector>,
    text: &str,
) -> Result<Vector, EmbedError> {
    if let Some(v) = cache.get(text) {
        return Ok(v.clone());
    }
    let v = base.embed(text)?;
    cache.insert(text.to_string(), v.clone());
    Ok(v)
}

/// Scale `grad` in place so its Frobenius norm is at most `max_norm`;
/// returns the norm before clipping.
pub(crate) fn clip_grad_norm(grad: &mut nalgebra::DMatrix<f64>, max_norm: f64) -> f64 {
    let norm = grad.norm();
    if norm > max_norm {
        *grad *= max_norm / norm;
    }
    norm
}

/// Mini-batch gradient descent on an identity-initialised adapter.
///
/// Each epoch visits the examples in a seeded shuffled order. A step clips
/// the global gradient norm, then applies `W ← W − lr·G − lr·wd·W`.
pub fn train(
    config: &TrainConfig,
    data: &TrainingData,
    base: &dyn BaseEmbedder,
) -> Result<TrainOutcome, EmbedError> {
    config.validate()?;
    if data.is_empty() {
        return Err(EmbedError::EmptyTrainingSet);
    }
    match (config.loss, data) {
        (LossKind::Triplet, TrainingData::Triplets(_)) => {}
        (LossKind::CosineSimilarity | LossKind::CosineSentence, TrainingData::Pairs(_)) => {}
        (loss, data) => {
            return Err(EmbedError::LossDataMismatch {
                loss,
                data: data.kind(),
            })
        }
    }

    let mut cache = HashMap::new();
    let prepared = match data {
        TrainingData::Pairs(pairs) => Prepared::Pairs(
            pairs
                .iter()
                .map(|(a, b, label)| {
                    Ok(PairExample {
                        a: embed_cached(base, &mut cache, a)?,
                        b: embed_cached(base, &mut cache, b)?,
                        label: *label,
                    })
                })
                .collect::<Result<_, EmbedError>>()?,
        ),
        TrainingData::Triplets(trips) => Prepared::Triplets(
            trips
                .iter()
                .map(|(a, p, n)| {
                    Ok(TripletExample {
                        anchor: embed_cached(base, &mut cache, a)?,
                        positive: embed_cached(base, &mut cache, p)?,
                        negative: embed_cached(base, &mut cache, n)?,
                    })
                })
                .collect::<Result<_, EmbedError>>()?,
        ),
    };

    let mut adapter = EmbeddingAdapter::identity(base.dim());
    adapter.header.loss = Some(config.loss.as_str().to_string());
    adapter.header.config = serde_json::to_value(config).ok();
    adapter.header.seed = Some(config.seed);
    adapter.header.base_embedder = Some(base.id());

    let mut trace = TrainTrace::default();
    let n = data.len();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("epoch-{epoch}")));
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let LossGrad { loss, mut grad } = match &prepared {
                Prepared::Pairs(all) => {
                    let batch: Vec<PairExample> = chunk.iter().map(|&i| all[i].clone()).collect();
                    if config.loss == LossKind::CosineSimilarity {
                        loss::cosine_similarity_loss(&adapter, &batch)?
                    } else {
                        loss::cosine_sentence_loss(&adapter, &batch, config.scale)?
                    }
                }
                Prepared::Triplets(all) => {
                    let batch: Vec<TripletExample> =
                        chunk.iter().map(|&i| all[i].clone()).collect();
                    loss::triplet_loss(&adapter, &batch, config.margin)?
                }
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(EmbedError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            trace
                .grad_norms
                .push(clip_grad_norm(&mut grad, config.max_grad_norm));
            let lr = config.learning_rate;
            let decay = 1.0 - lr * config.weight_decay;
            let w = adapter.weights_mut();
            *w *= decay;
            *w -= grad * lr;
            trace.batch_losses.push(loss);
            epoch_losses.push(loss);
        }
        trace
            .epoch_mean_losses
            .push(epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64);
    }
    Ok(TrainOutcome { adapter, trace })
}

/// Adapters produced for one training-set build: a single global adapter,
/// or one per question.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainedAdapters {
    pub global: Option<EmbeddingAdapter>,
    pub per_question: BTreeMap<String, EmbeddingAdapter>,
}

impl TrainedAdapters {
    pub fn is_empty(&self) -> bool {
        self.global.is_none() && self.per_question.is_empty()
    }

    pub fn len(&self) -> usize {
        self.global.iter().count() + self.per_question.len()
    }

    /// Serialized bytes of every adapter, for byte-equality checks.
    pub fn fingerprint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        if let Some(g) = &self.global {
            out.extend(g.to_bytes());
        }
        for (q, a) in &self.per_question {
            out.extend(q.as_bytes());
            out.extend(a.to_bytes());
        }
        out
    }
}

/// Train one adapter per training group. Groups with no usable examples
/// are skipped, so those questions fall back to the base embedding.
pub fn train_adapters(
    config: &TrainConfig,
    sets: &TrainingSets,
    corpus: &Corpus,
    base: &dyn BaseEmbedder,
) -> Result<(TrainedAdapters, BTreeMap<String, TrainTrace>), EmbedError> {
    let text_of = |id: &str| -> Result<String, EmbedError> {
        corpus
            .find_response(id)
            .map(|r| r.text.clone())
            .ok_or_else(|| EmbedError::UnknownResponse(id.to_string()))
    };
    let mut out = TrainedAdapters::default();
    let mut traces = BTreeMap::new();
    for group in &sets.groups {
        let data = match config.loss {
            LossKind::Triplet => TrainingData::Triplets(
                group
                    .triplets
                    .iter()
                    .map(|t| {
                        Ok((
                            text_of(&t.anchor_id)?,
                            text_of(&t.positive_id)?,
                            text_of(&t.negative_id)?,
                        ))
                    })
                    .collect::<Result<_, EmbedError>>()?,
            ),
            _ => TrainingData::Pairs(
                group
                    .pairs
                    .iter()
                    .map(|p| Ok((text_of(&p.a_id)?, text_of(&p.b_id)?, f64::from(p.label))))
                    .collect::<Result<_, EmbedError>>()?,
            ),
        };
        if data.is_empty() {
            continue;
        }
        let key = group.question_id.clone().unwrap_or_else(|| "global".into());
        let mut cfg = *config;
        cfg.seed = derive_seed(config.seed, &key);
        let TrainOutcome { mut adapter, trace } = train(&cfg, &data, base)?;
        adapter.header.question_id = group.question_id.clone();
        adapter.header.trained_on = Some(format!(
            "{}:{}:{:?}:{}:seed={}",
            sets.manifest.corpus,
            sets.manifest.scheme,
            sets.manifest.strategy,
            sets.manifest.scope,
            sets.manifest.seed
        ));
        traces.insert(key, trace);
        match &group.question_id {
            Some(q) => {
                out.per_question.insert(q.clone(), adapter);
            }
            None => out.global = Some(adapter),
        }
    }
    Ok((out, traces))
}
