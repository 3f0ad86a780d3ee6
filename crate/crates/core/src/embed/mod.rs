//! Text embeddings for retrieval.
//!
//! A frozen [`BaseEmbedder`] maps text to a dense vector. A trainable
//! [`EmbeddingAdapter`] (a square matrix) is applied on top and the result is
//! L2-normalized, so similarity between two answers is the dot product of
//! their adapted embeddings.

mod adapter;
mod hash;
pub mod loss;
mod remote;
mod train;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

pub use adapter::{AdapterHeader, EmbeddingAdapter, Projection};
pub use hash::{HashEmbedder, DEFAULT_DIM};
pub use remote::RemoteEmbedder;
pub use train::{
    train, train_adapters, LossKind, TrainConfig, TrainOutcome, TrainTrace, TrainedAdapters,
    TrainingData,
};

pub type Vector = DVector<f64>;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text {0:?} produced no features")]
    NoFeatures(String),
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("loss {loss:?} cannot train on {data} data")]
    LossDataMismatch { loss: LossKind, data: &'static str },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("unknown response id {0:?} in training set")]
    UnknownResponse(String),
    #[error("adapter file: {0}")]
    Format(String),
    #[error("remote embedder: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A frozen text encoder. Same text must always give the same vector.
pub trait BaseEmbedder: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vector, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Cosine similarity `u·v / (‖u‖‖v‖)`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

pub fn normalize(v: Vector) -> Result<Vector, EmbedError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    let n = v.norm();
    if n == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    Ok(v / n)
}

/// Embeds answer text for retrieval, optionally specialised per question.
pub trait TextEmbedder: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// Unit-norm embedding of `text` as an answer to `question_id`.
    fn embed_answer(&self, text: &str, question_id: Option<&str>) -> Result<Vector, EmbedError>;
}

/// Base embedder plus trained adapters.
///
/// Lookup order for a question: its own adapter, then the global adapter,
/// then the untouched (normalized) base embedding.
#[derive(Clone)]
pub struct AdaptedEmbedder {
    base: Arc<dyn BaseEmbedder>,
    global: Option<EmbeddingAdapter>,
    per_question: BTreeMap<String, EmbeddingAdapter>,
}

impl AdaptedEmbedder {
    pub fn new(base: Arc<dyn BaseEmbedder>) -> Self {
        AdaptedEmbedder {
            base,
            global: None,
            per_question: BTreeMap::new(),
        }
    }

    pub fn with_adapters(base: Arc<dyn BaseEmbedder>, adapters: TrainedAdapters) -> Self {
        AdaptedEmbedder {
            base,
            global: adapters.global,
            per_question: adapters.per_question,
        }
    }

    pub fn base(&self) -> &Arc<dyn BaseEmbedder> {
        &self.base
    }

    pub fn adapter_for(&self, question_id: Option<&str>) -> Option<&EmbeddingAdapter> {
        question_id
            .and_then(|q| self.per_question.get(q))
            .or(self.global.as_ref())
    }

    pub fn adapters(&self) -> TrainedAdapters {
        TrainedAdapters {
            global: self.global.clone(),
            per_question: self.per_question.clone(),
        }
    }
}

impl TextEmbedder for AdaptedEmbedder {
    fn id(&self) -> String {
        let mode = match (&self.global, self.per_question.len()) {
            (None, 0) => "base".to_string(),
            (Some(_), 0) => "global".to_string(),
            (_, n) => format!("per-question:{n}"),
        };
        format!("{}+{}", self.base.id(), mode)
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn embed_answer(&self, text: &str, question_id: Option<&str>) -> Result<Vector, EmbedError> {
        let x = self.base.embed(text)?;
        match self.adapter_for(question_id) {
            Some(adapter) => Ok(adapter.project(&x)?.unit),
            None => normalize(x),
        }
    }
}

impl<T: BaseEmbedder + ?Sized> TextEmbedder for Arc<T> {
    fn id(&self) -> String {
        BaseEmbedder::id(self.as_ref())
    }

    fn dim(&self) -> usize {
        BaseEmbedder::dim(self.as_ref())
    }

    fn embed_answer(&self, text: &str, _question_id: Option<&str>) -> Result<Vector, EmbedError> {
        normalize(self.as_ref().embed(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(EmbedError::ZeroNorm)
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in prop::collection::vec(-10.0f64..10.0, 6),
            v in prop::collection::vec(-10.0f64..10.0, 6),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
            let uv = cosine(&u, &v).unwrap();
            prop_assert!((uv - cosine(&v, &u).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&uv));
            let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
            prop_assert!((cosine(&u, &scaled).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adapted_embedder_falls_back_to_base() {
        let base: Arc<dyn BaseEmbedder> = Arc::new(HashEmbedder::new(32));
        let mut adapters = TrainedAdapters::default();
        adapters
            .per_question
            .insert("q1".into(), EmbeddingAdapter::identity(32).scaled(3.0));
        let emb = AdaptedEmbedder::with_adapters(base.clone(), adapters);
        let plain = normalize(base.embed("a wire loop").unwrap()).unwrap();
        let via_q1 = emb.embed_answer("a wire loop", Some("q1")).unwrap();
        let via_other = emb.embed_answer("a wire loop", Some("q2")).unwrap();
        assert!((via_q1 - &plain).norm() < 1e-12);
        assert!((via_other - &plain).norm() < 1e-12);
        assert!(emb.adapter_for(Some("q2")).is_none());
    }
}
